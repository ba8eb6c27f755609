#include "ccdet/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "ccdet/common.hpp"
#include "ccdet/png_io.hpp"

namespace fs = std::filesystem;

namespace ccdet {

ClassLevels class_levels(const SynthConfig& cfg, int cls) {
    const double lo = cfg.vis_lo, hi = cfg.vis_hi, ilo = cfg.ir_lo, ihi = cfg.ir_hi;
    switch (cls) {
        case 0: return {lo, lo, lo, ihi};
        case 1: return {hi, lo, hi, ilo};
        case 2: return {lo, hi, hi, ihi};
        case 3: return {hi, hi, lo, ilo};
        default: throw ContractError("class_levels: class id " + std::to_string(cls) + " out of range");
    }
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, int index) {
    return splitmix64(dataset_seed ^ splitmix64(0x9e3779b97f4a7c15ULL + std::uint64_t(index)));
}

float u8_to_unit(int v) { return float(double(v) / 255.0); }

int unit_to_u8(double v) { return int(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

namespace {

// per-channel flat double buffers during generation: r, g, b, ir
struct Canvas {
    int n = 0;
    std::vector<double> ch[4];
    explicit Canvas(int size) : n(size) {
        for (auto& c : ch) c.assign(std::size_t(n) * std::size_t(n), 0.5);
    }
    void fill_rect(int c, int x0, int y0, int w, int h, double v) {
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) ch[c][std::size_t(y * n + x)] = v;
    }
};

void paint_texture(Canvas& cv, RngStream& rng, int c, double amp) {
    const int n = cv.n;
    const int fx = 1 + int(rng.uniform_int(3)), fy = 1 + int(rng.uniform_int(3));
    const double px = rng.uniform(0, 6.283185307179586), py = rng.uniform(0, 6.283185307179586);
    std::vector<double> wx(std::size_t(n), 0.0), wy(std::size_t(n), 0.0);
    for (int i = 0; i < n; ++i) {
        wx[std::size_t(i)] = std::sin(6.283185307179586 * fx * i / n + px);
        wy[std::size_t(i)] = std::sin(6.283185307179586 * fy * i / n + py);
    }
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
            cv.ch[c][std::size_t(y * n + x)] = 0.5 + 0.5 * amp * (wy[std::size_t(y)] + wx[std::size_t(x)]);
}

Sample make_sample(const SynthConfig& cfg, std::uint64_t seed) {
    RngStream rng(seed);
    const int n = cfg.image_size;
    Canvas cv(n);

    // per-image modality quality: one modality may be washed out for this
    // image (contrast compressed toward 0.5 after painting). Skipping the
    // draw entirely when disabled keeps degrade_p = 0 datasets byte-identical
    // to generators without the feature.
    double vis_gain = 1.0, ir_gain = 1.0;
    if (cfg.degrade_p > 0) {
        const double u = rng.uniform();
        if (u < cfg.degrade_p)
            vis_gain = 1.0 - cfg.degrade_strength;
        else if (u < 2.0 * cfg.degrade_p)
            ir_gain = 1.0 - cfg.degrade_strength;
    }

    // background texture: visible channels get stronger waviness than IR
    for (int c = 0; c < 3; ++c) paint_texture(cv, rng, c, 0.06);
    paint_texture(cv, rng, 3, 0.04);

    // single-channel clutter rectangles drawn from the same intensity palette
    // and extent range as objects; channels are cluttered independently, so
    // clutter never carries a coherent cross-channel class pattern
    const int tiles = (n / 16) * (n / 16);
    const int vis_count = int(cfg.vis_clutter * tiles);
    const int ir_count = int(cfg.ir_clutter * tiles);
    const int span = cfg.extent_max - cfg.extent_min + 1;
    for (int c = 0; c < 4; ++c) {
        const int count = c < 3 ? vis_count : ir_count;
        const double lo = c < 3 ? cfg.vis_lo : cfg.ir_lo;
        const double hi = c < 3 ? cfg.vis_hi : cfg.ir_hi;
        for (int k = 0; k < count; ++k) {
            const int w = cfg.extent_min + int(rng.uniform_int(std::uint64_t(span)));
            const int h = cfg.extent_min + int(rng.uniform_int(std::uint64_t(span)));
            const int x0 = int(rng.uniform_int(std::uint64_t(n - w + 1)));
            const int y0 = int(rng.uniform_int(std::uint64_t(n - h + 1)));
            cv.fill_rect(c, x0, y0, w, h, rng.uniform() < 0.5 ? lo : hi);
        }
    }

    // objects: same filled-rectangle shape for every class, painted into all
    // four channels with the class level pattern
    Sample s;
    const int want = cfg.objects_min + int(rng.uniform_int(std::uint64_t(cfg.objects_max - cfg.objects_min + 1)));
    for (int obj = 0; obj < want; ++obj) {
        const int cls = int(rng.uniform_int(std::uint64_t(cfg.num_classes)));
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            const int w = cfg.extent_min + int(rng.uniform_int(std::uint64_t(span)));
            const int h = cfg.extent_min + int(rng.uniform_int(std::uint64_t(span)));
            const int x0 = int(rng.uniform_int(std::uint64_t(n - w + 1)));
            const int y0 = int(rng.uniform_int(std::uint64_t(n - h + 1)));
            BoxLabel box{cls, (x0 + w / 2.0) / n, (y0 + h / 2.0) / n, double(w) / n, double(h) / n};
            bool clear = true;
            for (const auto& other : s.boxes) clear = clear && iou(box, other) <= 0.1;
            if (!clear) continue;
            const ClassLevels lv = class_levels(cfg, cls);
            cv.fill_rect(0, x0, y0, w, h, lv.r);
            cv.fill_rect(1, x0, y0, w, h, lv.g);
            cv.fill_rect(2, x0, y0, w, h, lv.b);
            cv.fill_rect(3, x0, y0, w, h, lv.ir);
            s.boxes.push_back(box);
            placed = true;
        }
        // unplaceable after 100 attempts: object skipped
    }

    // wash out the degraded modality before noise: signal contrast shrinks
    // while the noise floor stays put
    if (vis_gain != 1.0)
        for (int c = 0; c < 3; ++c)
            for (auto& v : cv.ch[c]) v = 0.5 + vis_gain * (v - 0.5);
    if (ir_gain != 1.0)
        for (auto& v : cv.ch[3]) v = 0.5 + ir_gain * (v - 0.5);

    // additive Gaussian noise, then 8-bit quantization so the sample equals
    // its own disk round-trip exactly
    for (auto& chan : cv.ch)
        for (auto& v : chan) v += rng.normal() * cfg.noise_sigma;

    s.rgb = Tensor<float>::zeros({n, n, 3});
    s.ir = Tensor<float>::zeros({n, n});
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const std::size_t p = std::size_t(y * n + x);
            for (int c = 0; c < 3; ++c)
                s.rgb.data()[p * 3 + std::size_t(c)] = u8_to_unit(unit_to_u8(cv.ch[c][p]));
            s.ir.data()[p] = u8_to_unit(unit_to_u8(cv.ch[3][p]));
        }
    return s;
}

std::string sample_id(int index) {
    std::ostringstream os;
    os << std::setw(8) << std::setfill('0') << index;
    return os.str();
}

void warn(LoadReport* report, const std::string& msg) {
    if (report)
        report->warnings.push_back(msg);
    else
        std::cerr << "warning: " << msg << "\n";
}

}  // namespace

std::vector<Sample> gen_synthetic(int n, const SynthConfig& cfg) {
    cfg.validate();
    if (n < 0) throw ContractError("gen_synthetic: negative sample count " + std::to_string(n));
    std::vector<Sample> out;
    out.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) out.push_back(make_sample(cfg, sample_seed(cfg.seed, i)));
    return out;
}

void save_vedai_format(const std::vector<Sample>& samples, const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "labels");
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        const std::string id = sample_id(int(i));
        const int h = s.rgb.shape()[0], w = s.rgb.shape()[1];
        if (s.ir.shape() != Shape{h, w})
            throw ContractError("save_vedai_format: RGB/IR extent mismatch in sample " + id);

        ImageU8 rgb{w, h, 3, {}};
        rgb.pixels.resize(rgb.size());
        for (std::size_t p = 0; p < std::size_t(h) * std::size_t(w) * 3; ++p)
            rgb.pixels[p] = (unsigned char)unit_to_u8(double(s.rgb.data()[p]));
        write_png((fs::path(dir) / "images" / (id + "_co.png")).string(), rgb);

        ImageU8 ir{w, h, 1, {}};
        ir.pixels.resize(ir.size());
        for (std::size_t p = 0; p < std::size_t(h) * std::size_t(w); ++p)
            ir.pixels[p] = (unsigned char)unit_to_u8(double(s.ir.data()[p]));
        write_png((fs::path(dir) / "images" / (id + "_ir.png")).string(), ir);

        std::ofstream labels((fs::path(dir) / "labels" / (id + ".txt")).string());
        if (!labels) throw IoError("cannot write label file for sample " + id);
        labels << std::setprecision(17);
        for (const auto& b : s.boxes)
            labels << b.cls << " " << b.cx << " " << b.cy << " " << b.w << " " << b.h << "\n";
    }
}

std::vector<Sample> load_vedai_format(const std::string& image_dir, const std::string& label_dir,
                                      LoadReport* report) {
    if (!fs::is_directory(image_dir)) throw IoError("image directory not found: " + image_dir);
    const std::string suffix = "_co.png";
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(image_dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());

    std::vector<Sample> out;
    for (const auto& id : ids) {
        const fs::path co_path = fs::path(image_dir) / (id + suffix);
        const fs::path ir_path = fs::path(image_dir) / (id + "_ir.png");
        if (!fs::exists(ir_path)) {
            warn(report, "missing IR counterpart for id " + id + ", sample skipped");
            continue;
        }
        ImageU8 co = read_png(co_path.string());
        ImageU8 irm = read_png(ir_path.string());
        if (irm.channels != 1)
            throw FormatError("IR image must be single-channel: " + ir_path.string());
        if (co.width != irm.width || co.height != irm.height)
            throw FormatError("RGB/IR extent mismatch for id " + id + ": " + std::to_string(co.width) +
                              "x" + std::to_string(co.height) + " vs " + std::to_string(irm.width) +
                              "x" + std::to_string(irm.height));

        Sample s;
        const int h = co.height, w = co.width;
        s.rgb = Tensor<float>::zeros({h, w, 3});
        s.ir = Tensor<float>::zeros({h, w});
        for (std::size_t p = 0; p < std::size_t(h) * std::size_t(w); ++p) {
            for (int c = 0; c < 3; ++c)
                s.rgb.data()[p * 3 + std::size_t(c)] =
                    u8_to_unit(co.channels == 3 ? co.pixels[p * 3 + std::size_t(c)] : co.pixels[p]);
            s.ir.data()[p] = u8_to_unit(irm.pixels[p]);
        }

        const fs::path label_path = fs::path(label_dir) / (id + ".txt");
        if (!fs::exists(label_path)) {
            warn(report, "label file missing for id " + id + ", assuming zero boxes");
        } else {
            std::ifstream in(label_path.string());
            if (!in) throw IoError("cannot read label file: " + label_path.string());
            std::string line;
            int lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                std::istringstream ls(line);
                BoxLabel b;
                std::string extra;
                if (!(ls >> b.cls >> b.cx >> b.cy >> b.w >> b.h) || (ls >> extra)) {
                    warn(report, label_path.string() + ":" + std::to_string(lineno) +
                                     ": malformed label line, skipped");
                    continue;
                }
                const bool in_range = b.cls >= 0 && b.cx >= 0 && b.cx <= 1 && b.cy >= 0 && b.cy <= 1 &&
                                      b.w > 0 && b.w <= 1 && b.h > 0 && b.h <= 1;
                if (!in_range) {
                    warn(report, label_path.string() + ":" + std::to_string(lineno) +
                                     ": box out of range, skipped");
                    continue;
                }
                s.boxes.push_back(b);
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

Sample augment(const Sample& s, std::uint64_t seed) {
    RngStream rng(seed);
    const int h = s.rgb.shape()[0], w = s.rgb.shape()[1];
    Sample out;
    out.rgb = Tensor<float>::from(s.rgb.shape(), s.rgb.data());
    out.ir = Tensor<float>::from(s.ir.shape(), s.ir.data());
    out.boxes = s.boxes;

    if (rng.uniform() < 0.5) {  // horizontal flip
        auto& rv = out.rgb.data();
        auto& iv = out.ir.data();
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w / 2; ++x) {
                const std::size_t a = std::size_t(y * w + x), b = std::size_t(y * w + (w - 1 - x));
                for (int c = 0; c < 3; ++c) std::swap(rv[a * 3 + std::size_t(c)], rv[b * 3 + std::size_t(c)]);
                std::swap(iv[a], iv[b]);
            }
        for (auto& box : out.boxes) box.cx = 1.0 - box.cx;
    }

    if (rng.uniform() < 0.5) {  // translation, identical for both modalities
        const double dx = rng.uniform(-0.1, 0.1), dy = rng.uniform(-0.1, 0.1);
        const int px = int(std::lround(dx * w)), py = int(std::lround(dy * h));
        const double tx = double(px) / w, ty = double(py) / h;
        auto shifted_rgb = Tensor<float>::full({h, w, 3}, 0.5f);
        auto shifted_ir = Tensor<float>::full({h, w}, 0.5f);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int sy = y - py, sx = x - px;
                if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
                const std::size_t d = std::size_t(y * w + x), src = std::size_t(sy * w + sx);
                for (int c = 0; c < 3; ++c)
                    shifted_rgb.data()[d * 3 + std::size_t(c)] = out.rgb.data()[src * 3 + std::size_t(c)];
                shifted_ir.data()[d] = out.ir.data()[src];
            }
        out.rgb = shifted_rgb;
        out.ir = shifted_ir;
        // shift one axis; extents are only recomputed when clipping bites so
        // interior boxes translate without rounding drift
        auto shift_axis = [](double center, double extent, double t, bool& gone) {
            const double lo = center + t - extent / 2, hi = center + t + extent / 2;
            if (lo >= 0 && hi <= 1) return std::pair<double, double>{center + t, extent};
            const double clo = std::max(lo, 0.0), chi = std::min(hi, 1.0);
            if (chi - clo <= 0) gone = true;
            return std::pair<double, double>{(clo + chi) / 2, chi - clo};
        };
        std::vector<BoxLabel> kept;
        for (auto box : out.boxes) {
            const double area = box.w * box.h;
            bool gone = false;
            auto [ncx, nw] = shift_axis(box.cx, box.w, tx, gone);
            auto [ncy, nh] = shift_axis(box.cy, box.h, ty, gone);
            if (gone || nw * nh < 0.25 * area) continue;
            box.cx = ncx;
            box.cy = ncy;
            box.w = nw;
            box.h = nh;
            kept.push_back(box);
        }
        out.boxes = kept;
    }
    return out;
}

}  // namespace ccdet
