#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "cordkit/error.hpp"
#include "cordkit/harness.hpp"
#include "cordkit/nifti.hpp"

namespace cordkit {

namespace fs = std::filesystem;

const char* to_string(SegMode m) noexcept {
    switch (m) {
    case SegMode::multi_class: return "multi_class";
    case SegMode::sc_only: return "sc_only";
    case SegMode::gm_only: return "gm_only";
    }
    return "?";
}

SegMode seg_mode_from_string(const std::string& s) {
    if (s == "multi_class") return SegMode::multi_class;
    if (s == "sc_only") return SegMode::sc_only;
    if (s == "gm_only") return SegMode::gm_only;
    fail(ErrorCode::invalid_argument, "unknown segmentation mode '" + s + "'");
}

double otsu_threshold(std::span<const double> values, double* eta) {
    require(!values.empty(), ErrorCode::invalid_argument, "otsu_threshold: no values");
    std::vector<double> v(values.begin(), values.end());
    std::sort(v.begin(), v.end());
    const auto n = static_cast<double>(v.size());
    double total = 0.0;
    for (double x : v) total += x;
    const double mean = total / n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= n;

    double best = -1.0, threshold = v.front(), left = 0.0;
    for (std::size_t i = 0; i + 1 < v.size(); ++i) {
        left += v[i];
        if (v[i] == v[i + 1]) continue;
        const double w0 = static_cast<double>(i + 1) / n, w1 = 1.0 - w0;
        const double m0 = left / static_cast<double>(i + 1), m1 = (total - left) / static_cast<double>(v.size() - i - 1);
        const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if (between > best) {
            best = between;
            threshold = 0.5 * (v[i] + v[i + 1]);
        }
    }
    if (eta) *eta = var > 0 && best > 0 ? best / var : 0.0;
    return threshold;
}

namespace {

std::vector<std::uint8_t> largest_component(const std::vector<std::uint8_t>& fg, int w, int h) {
    std::vector<int> label(fg.size(), 0);
    std::vector<std::size_t> stack;
    int best_label = 0, current = 0;
    std::size_t best_size = 0;
    for (std::size_t start = 0; start < fg.size(); ++start) {
        if (!fg[start] || label[start]) continue;
        ++current;
        std::size_t size = 0;
        stack.push_back(start);
        label[start] = current;
        while (!stack.empty()) {
            const auto i = stack.back();
            stack.pop_back();
            ++size;
            const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
                const auto j = static_cast<std::size_t>(ny[k]) * w + nx[k];
                if (fg[j] && !label[j]) {
                    label[j] = current;
                    stack.push_back(j);
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_label = current;
        }
    }
    std::vector<std::uint8_t> out(fg.size(), 0);
    if (best_label)
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = label[i] == best_label;
    return out;
}

// Cross-shaped structuring element of radius 1.
std::vector<std::uint8_t> morph(const std::vector<std::uint8_t>& m, int w, int h, bool erode) {
    std::vector<std::uint8_t> out(m.size(), 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int nx[5] = {x, x - 1, x + 1, x, x};
            const int ny[5] = {y, y, y, y - 1, y + 1};
            bool all = true, any = false;
            for (int k = 0; k < 5; ++k) {
                const bool inside = nx[k] >= 0 && ny[k] >= 0 && nx[k] < w && ny[k] < h;
                const bool v = inside && m[static_cast<std::size_t>(ny[k]) * w + nx[k]];
                all = all && v;
                any = any || v;
            }
            out[static_cast<std::size_t>(y) * w + x] = erode ? all : any;
        }
    return out;
}

double percentile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace

LabelMask baseline_segment(const ImageSlice& img, SegMode mode) {
    const int w = img.width(), h = img.height();
    LabelMask empty(w, h, img.spacing(), img.id());
    const auto s = gaussian_smooth(img, 1.0);
    const int x0 = w / 4, y0 = h / 4, x1 = x0 + std::max(1, w / 2), y1 = y0 + std::max(1, h / 2);
    std::vector<double> region;
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) region.push_back(s.at(x, y));
    double eta = 0.0;
    const double t = otsu_threshold(region, &eta);
    if (eta < 0.75) return empty;

    std::vector<std::uint8_t> fg(img.size(), 0);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) fg[static_cast<std::size_t>(y) * w + x] = s.at(x, y) > t;
    const auto sc = largest_component(fg, w, h);

    std::vector<double> sc_values;
    for (std::size_t i = 0; i < sc.size(); ++i)
        if (sc[i]) sc_values.push_back(s.data()[i]);
    if (sc_values.empty()) return empty;
    const double p70 = percentile(sc_values, 0.70);
    std::vector<std::uint8_t> gm(sc.size(), 0);
    for (std::size_t i = 0; i < sc.size(); ++i) gm[i] = sc[i] && s.data()[i] > p70;
    gm = morph(morph(gm, w, h, true), w, h, false);

    std::vector<std::uint8_t> codes(sc.size(), 0);
    for (std::size_t i = 0; i < codes.size(); ++i) {
        switch (mode) {
        case SegMode::multi_class: codes[i] = gm[i] ? kGrayMatter : sc[i] ? kWhiteMatter : kBackground; break;
        case SegMode::sc_only: codes[i] = sc[i] ? kWhiteMatter : kBackground; break;
        case SegMode::gm_only: codes[i] = gm[i] ? kGrayMatter : kBackground; break;
        }
    }
    return empty.with_codes(std::move(codes));
}

LabelMask merge_single_class(const LabelMask& sc, const LabelMask& gm) {
    require(sc.width() == gm.width() && sc.height() == gm.height(), ErrorCode::dimension,
            "merge_single_class: grids differ");
    std::vector<std::uint8_t> codes(sc.size(), 0);
    for (std::size_t i = 0; i < codes.size(); ++i)
        codes[i] = gm.codes()[i] != 0 ? kGrayMatter : sc.codes()[i] != 0 ? kWhiteMatter : kBackground;
    return sc.with_codes(std::move(codes));
}

std::string substitute(std::string text, const std::vector<std::pair<std::string, std::string>>& values) {
    for (const auto& [key, value] : values) {
        const std::string token = '{' + key + '}';
        for (std::size_t pos = text.find(token); pos != std::string::npos; pos = text.find(token, pos + value.size()))
            text.replace(pos, token.size(), value);
    }
    return text;
}

namespace {

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

} // namespace

LabelMask run_external_segmenter(const ExternalCall& call, const fs::path& input, const fs::path& output, int width,
                                 int height, const std::vector<std::pair<std::string, std::string>>& extra) {
    require(call.timeout_s > 0, ErrorCode::invalid_argument, "external timeout must be positive");
    std::vector<std::pair<std::string, std::string>> values{{"input", shell_quote(input.string())},
                                                            {"output", shell_quote(output.string())}};
    for (const auto& [k, v] : extra) values.emplace_back(k, shell_quote(v));
    const std::string command = substitute(call.command, values);
    std::error_code ec;
    fs::remove(output, ec);
    if (!output.parent_path().empty()) fs::create_directories(output.parent_path(), ec);
    const std::string log = output.string() + ".log";

    const pid_t pid = ::fork();
    require(pid >= 0, ErrorCode::external_exit, "fork failed");
    if (pid == 0) {
        ::setpgid(0, 0);
        const int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
        if (fd >= 0) {
            ::dup2(fd, 1);
            ::dup2(fd, 2);
            ::close(fd);
        }
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::setpgid(pid, pid);

    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(call.timeout_s);
    auto pause = std::chrono::microseconds(500);
    int status = 0;
    for (;;) {
        const pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) break;
        if (r < 0) fail(ErrorCode::external_exit, "waitpid failed for: " + command);
        if (std::chrono::steady_clock::now() >= deadline) {
            ::kill(-pid, SIGKILL);
            ::kill(pid, SIGKILL);
            ::waitpid(pid, &status, 0);
            fail(ErrorCode::external_timeout,
                 "external segmenter timed out after " + std::to_string(call.timeout_s) + " s: " + command);
        }
        std::this_thread::sleep_for(pause);
        pause = std::min(pause * 2, std::chrono::microseconds(20000));
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
        fail(ErrorCode::external_exit, "external segmenter exited with status " + std::to_string(code) + ": " + command);
    }
    require(fs::exists(output), ErrorCode::external_output, "external segmenter produced no " + output.string());
    std::vector<LabelMask> masks;
    try {
        masks = read_label_stack(output);
    } catch (const Error& e) {
        fail(ErrorCode::external_output, std::string("invalid external output: ") + e.what());
    }
    require(masks.size() == 1, ErrorCode::external_output,
            "external output must hold one slice, got " + std::to_string(masks.size()));
    require(masks.front().width() == width && masks.front().height() == height, ErrorCode::external_output,
            "external output is " + std::to_string(masks.front().width()) + "x" +
                std::to_string(masks.front().height()) + ", expected " + std::to_string(width) + "x" +
                std::to_string(height));
    return masks.front();
}

} // namespace cordkit
