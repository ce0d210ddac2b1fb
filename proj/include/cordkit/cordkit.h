/* cordkit C API: opaque handles, status codes, thread-local error text. */
#ifndef CORDKIT_H
#define CORDKIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define CK_API __attribute__((visibility("default")))
#else
#define CK_API
#endif

typedef enum ck_status {
    CK_OK = 0,
    CK_ERR_INVALID_ARGUMENT = 1,
    CK_ERR_DIMENSION = 2,
    CK_ERR_EMPTY_MASK = 3,
    CK_ERR_IO = 4,
    CK_ERR_BAD_MAGIC = 5,
    CK_ERR_UNSUPPORTED_DATATYPE = 6,
    CK_ERR_TRUNCATED = 7,
    CK_ERR_LABEL_ALPHABET = 8,
    CK_ERR_CONSISTENCY = 9,
    CK_ERR_INFEASIBLE = 10,
    CK_ERR_MISSING_SUBJECT = 11,
    CK_ERR_EXTERNAL_EXIT = 12,
    CK_ERR_EXTERNAL_TIMEOUT = 13,
    CK_ERR_EXTERNAL_OUTPUT = 14,
    CK_ERR_CONFIG = 15,
    CK_ERR_INTERNAL = 99
} ck_status;

typedef struct ck_config ck_config;
typedef struct ck_image_stack ck_image_stack;
typedef struct ck_label_stack ck_label_stack;

CK_API const char* ck_version(void);
/* Message of the last failed call on this thread; "" when none. */
CK_API const char* ck_last_error(void);
CK_API const char* ck_status_name(ck_status status);
/* Nonzero for bad input or configuration, zero for runtime failures. */
CK_API int ck_status_is_validation(ck_status status);
/* Releases strings returned through char** out-parameters. */
CK_API void ck_string_free(char* s);

/* Configuration (JSON, schema_version 1). Keys are dotted paths such as
 * "phantom.groups" or "experiment.ds1". Setting "phantom.preset" resets the
 * other phantom fields to that preset. */
CK_API ck_status ck_config_default(ck_config** out);
CK_API ck_status ck_config_parse(const char* json_text, ck_config** out);
CK_API ck_status ck_config_load(const char* path, ck_config** out);
CK_API ck_status ck_config_set_json(ck_config* cfg, const char* key, const char* json_value);
CK_API ck_status ck_config_set_string(ck_config* cfg, const char* key, const char* value);
/* Checks the merged document against the schema. */
CK_API ck_status ck_config_validate(const ck_config* cfg);
CK_API ck_status ck_config_to_json(const ck_config* cfg, char** out);
CK_API void ck_config_free(ck_config* cfg);

/* NIfTI stacks */
CK_API ck_status ck_image_stack_read(const char* path, ck_image_stack** out);
CK_API size_t ck_image_stack_count(const ck_image_stack* s);
CK_API ck_status ck_image_stack_dims(const ck_image_stack* s, size_t index, int* width, int* height);
CK_API ck_status ck_image_stack_copy(const ck_image_stack* s, size_t index, double* buffer, size_t length);
CK_API void ck_image_stack_free(ck_image_stack* s);

CK_API ck_status ck_label_stack_read(const char* path, ck_label_stack** out);
CK_API size_t ck_label_stack_count(const ck_label_stack* s);
CK_API ck_status ck_label_stack_dims(const ck_label_stack* s, size_t index, int* width, int* height);
CK_API ck_status ck_label_stack_copy(const ck_label_stack* s, size_t index, uint8_t* buffer, size_t length);
CK_API void ck_label_stack_free(ck_label_stack* s);

/* Index 0 is SC (codes 1 and 2), index 1 is GM (code 2). */
typedef struct ck_slice_metrics {
    double dsc[2];
    double hdrfdst[2];
    double volsmty[2];
    int hd_valid[2];
} ck_slice_metrics;

CK_API ck_status ck_evaluate_slice(const ck_label_stack* pred, const ck_label_stack* gt, size_t index,
                                   double hd_percentile, ck_slice_metrics* out);
/* Scores every slice of pred against gt. gt2 (optional) is a second rater,
 * reported as inter-rater agreement. metrics_csv (optional) receives the
 * per-slice records. */
CK_API ck_status ck_evaluate_files(const char* pred, const char* gt, const char* gt2, const char* metrics_csv,
                                   char** report);

/* Pipeline stages. Each takes the settings from cfg; `report` (optional)
 * receives a short human-readable summary. */
CK_API ck_status ck_run_phantom(const ck_config* cfg, const char* out_dir, char** report);
CK_API ck_status ck_run_prep(const ck_config* cfg, const char* raw_dir, const char* out_dir, char** report);
CK_API ck_status ck_run_split(const ck_config* cfg, const char* bids_dir, const char* folds_tsv, char** report);
CK_API ck_status ck_run_template(const ck_config* cfg, const char* bids_dir, const char* out_dir, char** report);
/* template_dir may be NULL: realistic draws then fall back to smart. */
CK_API ck_status ck_run_augment(const ck_config* cfg, const char* bids_dir, const char* template_dir,
                                const char* out_dir, char** report);
/* participants_tsv may be NULL; it enables per-group cells. */
CK_API ck_status ck_run_stats(const ck_config* cfg, const char* metrics_csv, const char* participants_tsv,
                              int by_fold, const char* out_dir, char** report);
CK_API ck_status ck_run_exp1(const ck_config* cfg, char** report);
CK_API ck_status ck_run_exp2(const ck_config* cfg, char** report);

#ifdef __cplusplus
}
#endif

#endif
