#include "deft/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

namespace deft {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr char kMagic[8] = {'D', 'E', 'F', 'T', 'D', 'A', 'T', 'A'};
constexpr std::uint16_t kVersion = 1;
constexpr std::int64_t kMaxPixels = std::int64_t(1) << 26;  // generation budget

double snap(double v) {
    for (double target : {0.0, 1.0, -1.0})
        if (std::fabs(v - target) < 1e-12) return target;
    return v;
}

struct Rotation {
    double c, s;
    explicit Rotation(double angle) : c(snap(std::cos(angle))), s(snap(std::sin(angle))) {}
};

bool inside_square(double x, double y, double half_side) {
    return std::fabs(x) <= half_side && std::fabs(y) <= half_side;
}

bool inside_ellipse(double x, double y, double a, double b) {
    const double u = x / a, v = y / b;
    return u * u + v * v <= 1.0;
}

struct Triangle {
    double vx[3], vy[3];
    Triangle(double radius, double apex_angle) {
        for (int k = 0; k < 3; ++k) {
            const double a = apex_angle + 2.0 * kPi * k / 3.0;
            vx[k] = radius * std::cos(a);
            vy[k] = radius * std::sin(a);
        }
    }
    bool contains(double x, double y) const {
        bool pos = false, neg = false;
        for (int k = 0; k < 3; ++k) {
            const int k2 = (k + 1) % 3;
            const double cross =
                (vx[k2] - vx[k]) * (y - vy[k]) - (vy[k2] - vy[k]) * (x - vx[k]);
            if (cross > 0) pos = true;
            if (cross < 0) neg = true;
        }
        return !(pos && neg);
    }
};

template <typename V>
void write_pod(std::ofstream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::ifstream& in, const char* what) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) throw std::runtime_error(std::string("dataset file truncated while reading ") + what);
    return v;
}

}  // namespace

void FactorSchema::validate() const {
    std::set<std::string> names;
    for (const Factor& f : factors) {
        if (f.cardinality < 1) throw std::invalid_argument("factor cardinality must be >= 1");
        if (f.name.empty()) throw std::invalid_argument("factor name empty");
        if (!names.insert(f.name).second) throw std::invalid_argument("duplicate factor name " + f.name);
    }
}

int FactorSchema::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < factors.size(); ++i)
        if (factors[i].name == name) return static_cast<int>(i);
    return -1;
}

std::int64_t FactorSchema::grid_size() const {
    std::int64_t n = 1;
    for (const Factor& f : factors) n *= f.cardinality;
    return n;
}

std::vector<int> LabeledDataset::label_column(int f) const {
    std::vector<int> out(static_cast<std::size_t>(n()));
    for (int i = 0; i < n(); ++i) out[static_cast<std::size_t>(i)] = label(i, f);
    return out;
}

Tensor<float> LabeledDataset::gather_images(const std::vector<int>& rows) const {
    const int c = channels(), h = images.extent(2), w = images.extent(3);
    const std::size_t per = static_cast<std::size_t>(c) * h * w;
    Tensor<float> out({static_cast<int>(rows.size()), c, h, w});
    for (std::size_t b = 0; b < rows.size(); ++b)
        std::copy_n(images.data.data() + static_cast<std::size_t>(rows[b]) * per, per,
                    out.data.data() + b * per);
    return out;
}

LabeledDataset LabeledDataset::subset(const std::vector<int>& rows) const {
    LabeledDataset out;
    out.schema = schema;
    out.images = gather_images(rows);
    const int f = schema.num_factors();
    out.labels.resize(rows.size() * static_cast<std::size_t>(f));
    for (std::size_t b = 0; b < rows.size(); ++b)
        for (int k = 0; k < f; ++k)
            out.labels[b * static_cast<std::size_t>(f) + static_cast<std::size_t>(k)] =
                labels[static_cast<std::size_t>(rows[b]) * static_cast<std::size_t>(f) +
                       static_cast<std::size_t>(k)];
    return out;
}

void LabeledDataset::validate() const {
    schema.validate();
    if (images.rank() != 4) throw std::invalid_argument("dataset images must be [N,C,H,W]");
    const int count = n();
    if (count <= 0) throw std::invalid_argument("dataset is empty");
    const int h = images.extent(2), w = images.extent(3);
    if (h != w || !((h & (h - 1)) == 0) || h < 16)
        throw std::invalid_argument("dataset resolution must be a power of two >= 16");
    const int f = schema.num_factors();
    if (labels.size() != static_cast<std::size_t>(count) * static_cast<std::size_t>(f))
        throw std::invalid_argument("label matrix size mismatch");
    for (int i = 0; i < count; ++i)
        for (int k = 0; k < f; ++k)
            if (label(i, k) >= schema.factors[static_cast<std::size_t>(k)].cardinality)
                throw std::invalid_argument("label out of range for factor " +
                                            schema.factors[static_cast<std::size_t>(k)].name);
}

double grid_center_px(int idx, int card, int resolution) {
    const double margin = resolution / 4.0;
    if (card <= 1) return resolution / 2.0;
    const double span = (resolution - 1.0) - 2.0 * margin;
    return std::round(margin + idx * span / (card - 1));
}

double scale_radius_px(int idx, int card, int resolution) {
    const double unit = resolution / 4.0;
    if (card <= 1) return 0.75 * unit;
    return (0.5 + 0.5 * idx / (card - 1.0)) * unit;
}

double orientation_rad(int idx, int card) {
    if (card <= 1) return 0.0;
    return 2.0 * kPi * idx / card;
}

Tensor<float> render_sprite(const RenderParams& p, int resolution) {
    if (p.shape_id < 0 || p.shape_id > 2) throw std::invalid_argument("unknown shape id");
    Tensor<float> img({1, resolution, resolution});
    const Rotation rot(p.angle_rad);
    const double half_side = p.circumradius_px / std::sqrt(2.0);
    const Triangle tri(p.circumradius_px, 0.0);
    const double reach = p.circumradius_px + 1.0;
    const int y0 = std::max(0, static_cast<int>(std::floor(p.cy - reach)));
    const int y1 = std::min(resolution - 1, static_cast<int>(std::ceil(p.cy + reach)));
    const int x0 = std::max(0, static_cast<int>(std::floor(p.cx - reach)));
    const int x1 = std::min(resolution - 1, static_cast<int>(std::ceil(p.cx + reach)));
    for (int i = y0; i <= y1; ++i) {
        for (int j = x0; j <= x1; ++j) {
            int hits = 0;
            for (int v = 0; v < 4; ++v) {
                for (int u = 0; u < 4; ++u) {
                    const double dx = j + (u + 0.5) / 4.0 - p.cx;
                    const double dy = i + (v + 0.5) / 4.0 - p.cy;
                    // rotate into the sprite frame
                    const double x = dx * rot.c + dy * rot.s;
                    const double y = -dx * rot.s + dy * rot.c;
                    bool in = false;
                    switch (p.shape_id) {
                        case 0: in = inside_square(x, y, half_side); break;
                        case 1: in = inside_ellipse(x, y, p.circumradius_px, 0.6 * p.circumradius_px); break;
                        case 2: in = tri.contains(x, y); break;
                    }
                    hits += in ? 1 : 0;
                }
            }
            img.data[static_cast<std::size_t>(i) * resolution + j] =
                static_cast<float>(std::round(255.0 * hits / 16.0) / 255.0);
        }
    }
    return img;
}

Tensor<float> render_shape(int shape_id, int scale_idx, int scale_card, int orient_idx, int orient_card,
                           int posx_idx, int posx_card, int posy_idx, int posy_card, int resolution) {
    auto check = [](int idx, int card, const char* what) {
        if (idx < 0 || idx >= card) throw std::invalid_argument(std::string(what) + " index out of range");
    };
    check(shape_id, 3, "shape");
    check(scale_idx, scale_card, "scale");
    check(orient_idx, orient_card, "orientation");
    check(posx_idx, posx_card, "posX");
    check(posy_idx, posy_card, "posY");
    RenderParams p;
    p.shape_id = shape_id;
    p.circumradius_px = scale_radius_px(scale_idx, scale_card, resolution);
    p.angle_rad = orientation_rad(orient_idx, orient_card);
    p.cx = grid_center_px(posx_idx, posx_card, resolution);
    p.cy = grid_center_px(posy_idx, posy_card, resolution);
    return render_sprite(p, resolution);
}

LabeledDataset generate_grid_dataset(const FactorSchema& schema, int resolution) {
    schema.validate();
    static const std::set<std::string> known = {"shape", "scale", "orientation", "posX", "posY"};
    for (const Factor& f : schema.factors)
        if (known.find(f.name) == known.end())
            throw std::invalid_argument("unknown render factor: " + f.name);
    const std::int64_t count = schema.grid_size();
    if (count <= 0 || count * resolution * resolution > kMaxPixels)
        throw std::invalid_argument("grid dataset exceeds the generation budget");

    const int f = schema.num_factors();
    LabeledDataset ds;
    ds.schema = schema;
    ds.images = Tensor<float>({static_cast<int>(count), 1, resolution, resolution});
    ds.labels.resize(static_cast<std::size_t>(count) * static_cast<std::size_t>(f));

    const std::size_t per = static_cast<std::size_t>(resolution) * resolution;
    std::vector<int> digits(static_cast<std::size_t>(f));
    for (std::int64_t row = 0; row < count; ++row) {
        std::int64_t rem = row;
        for (int k = f - 1; k >= 0; --k) {
            const int card = schema.factors[static_cast<std::size_t>(k)].cardinality;
            digits[static_cast<std::size_t>(k)] = static_cast<int>(rem % card);
            rem /= card;
        }
        int shape_id = 0, scale_idx = 0, scale_card = 1, orient_idx = 0, orient_card = 1;
        int px_idx = 0, px_card = 1, py_idx = 0, py_card = 1;
        for (int k = 0; k < f; ++k) {
            const Factor& fac = ds.schema.factors[static_cast<std::size_t>(k)];
            const int v = digits[static_cast<std::size_t>(k)];
            ds.labels[static_cast<std::size_t>(row) * f + k] = static_cast<std::uint16_t>(v);
            if (fac.name == "shape") shape_id = v;
            else if (fac.name == "scale") { scale_idx = v; scale_card = fac.cardinality; }
            else if (fac.name == "orientation") { orient_idx = v; orient_card = fac.cardinality; }
            else if (fac.name == "posX") { px_idx = v; px_card = fac.cardinality; }
            else if (fac.name == "posY") { py_idx = v; py_card = fac.cardinality; }
        }
        Tensor<float> img = render_shape(shape_id, scale_idx, scale_card, orient_idx, orient_card,
                                         px_idx, px_card, py_idx, py_card, resolution);
        std::copy_n(img.data.data(), per, ds.images.data.data() + static_cast<std::size_t>(row) * per);
    }
    ds.validate();
    return ds;
}

int quantize_angle(double theta, int bins) {
    const double step = 2.0 * kPi / bins;
    int bin = static_cast<int>(std::ceil((theta + kPi) / step)) - 1;
    return std::min(bins - 1, std::max(0, bin));
}

double bin_center_angle(int bin, int bins) {
    const double step = 2.0 * kPi / bins;
    return -kPi + (bin + 0.5) * step;
}

LabeledDataset generate_triangle_correlated(int resolution, int grid, int orientation_bins) {
    if (grid < 2) throw std::invalid_argument("triangle dataset needs a grid of at least 2");
    FactorSchema schema;
    schema.factors = {{"posX", grid, {}}, {"posY", grid, {}}, {"orientation", orientation_bins, {}}};
    const std::int64_t count = static_cast<std::int64_t>(grid) * grid;
    if (count * resolution * resolution > kMaxPixels)
        throw std::invalid_argument("triangle dataset exceeds the generation budget");

    LabeledDataset ds;
    ds.schema = schema;
    ds.images = Tensor<float>({static_cast<int>(count), 1, resolution, resolution});
    ds.labels.resize(static_cast<std::size_t>(count) * 3);

    const double center = resolution / 2.0;
    const std::size_t per = static_cast<std::size_t>(resolution) * resolution;
    std::int64_t row = 0;
    for (int xi = 0; xi < grid; ++xi) {
        for (int yi = 0; yi < grid; ++yi, ++row) {
            // half-pixel lattice: integer pixel steps, never on the canvas center
            const double cx = grid_center_px(xi, grid, resolution) + 0.5;
            const double cy = grid_center_px(yi, grid, resolution) + 0.5;
            const double theta = std::atan2(cy - center, cx - center);
            const int obin = quantize_angle(theta, orientation_bins);
            ds.labels[static_cast<std::size_t>(row) * 3 + 0] = static_cast<std::uint16_t>(xi);
            ds.labels[static_cast<std::size_t>(row) * 3 + 1] = static_cast<std::uint16_t>(yi);
            ds.labels[static_cast<std::size_t>(row) * 3 + 2] = static_cast<std::uint16_t>(obin);
            RenderParams p;
            p.shape_id = 2;
            p.circumradius_px = 0.75 * resolution / 4.0;
            // apex points back toward the canvas center
            p.angle_rad = bin_center_angle(obin, orientation_bins) + kPi;
            p.cx = cx;
            p.cy = cy;
            Tensor<float> img = render_sprite(p, resolution);
            std::copy_n(img.data.data(), per, ds.images.data.data() + static_cast<std::size_t>(row) * per);
        }
    }
    ds.validate();
    return ds;
}

LabeledDataset fixed_factor_batch(const LabeledDataset& ds, int factor_index, Rng& rng) {
    const int f = ds.schema.num_factors();
    if (factor_index < 0 || factor_index >= f) throw std::invalid_argument("factor index out of range");
    std::map<std::vector<std::uint16_t>, int> row_of;
    for (int i = 0; i < ds.n(); ++i) {
        std::vector<std::uint16_t> key(ds.labels.begin() + static_cast<std::size_t>(i) * f,
                                       ds.labels.begin() + static_cast<std::size_t>(i + 1) * f);
        row_of.emplace(std::move(key), i);
    }
    const int base = static_cast<int>(rng.below(static_cast<std::uint64_t>(ds.n())));
    std::vector<std::uint16_t> key(ds.labels.begin() + static_cast<std::size_t>(base) * f,
                                   ds.labels.begin() + static_cast<std::size_t>(base + 1) * f);
    const int card = ds.schema.factors[static_cast<std::size_t>(factor_index)].cardinality;
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(card));
    for (int v = 0; v < card; ++v) {
        key[static_cast<std::size_t>(factor_index)] = static_cast<std::uint16_t>(v);
        auto it = row_of.find(key);
        if (it == row_of.end())
            throw std::runtime_error("fixed_factor_batch: tuple not present; dataset is not a full grid");
        rows.push_back(it->second);
    }
    return ds.subset(rows);
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
    ds.validate();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open dataset file for writing: " + path);
    out.write(kMagic, sizeof(kMagic));
    write_pod<std::uint16_t>(out, kVersion);
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(ds.resolution()));
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(ds.channels()));
    write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(ds.schema.num_factors()));
    for (const Factor& f : ds.schema.factors) {
        write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(f.name.size()));
        out.write(f.name.data(), static_cast<std::streamsize>(f.name.size()));
        write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(f.cardinality));
    }
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ds.n()));
    out.write(reinterpret_cast<const char*>(ds.labels.data()),
              static_cast<std::streamsize>(ds.labels.size() * sizeof(std::uint16_t)));
    std::vector<std::uint8_t> pixels(ds.images.data.size());
    for (std::size_t i = 0; i < pixels.size(); ++i)
        pixels[i] = static_cast<std::uint8_t>(std::lround(255.0f * ds.images.data[i]));
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw std::runtime_error("dataset write failed: " + path);
}

LabeledDataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open dataset file: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("bad dataset magic in " + path);
    const auto version = read_pod<std::uint16_t>(in, "version");
    if (version != kVersion)
        throw std::runtime_error("unsupported dataset version " + std::to_string(version));
    const int res = read_pod<std::uint16_t>(in, "resolution");
    const int channels = read_pod<std::uint16_t>(in, "channels");
    const int nf = read_pod<std::uint16_t>(in, "factor count");
    LabeledDataset ds;
    for (int k = 0; k < nf; ++k) {
        const auto len = read_pod<std::uint16_t>(in, "factor name length");
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (!in) throw std::runtime_error("dataset file truncated while reading factor name");
        const int card = read_pod<std::uint16_t>(in, "cardinality");
        ds.schema.factors.push_back({std::move(name), card, {}});
    }
    const auto count = read_pod<std::uint32_t>(in, "sample count");
    ds.labels.resize(static_cast<std::size_t>(count) * static_cast<std::size_t>(nf));
    in.read(reinterpret_cast<char*>(ds.labels.data()),
            static_cast<std::streamsize>(ds.labels.size() * sizeof(std::uint16_t)));
    if (!in) throw std::runtime_error("dataset file truncated while reading labels");
    const std::size_t npix =
        static_cast<std::size_t>(count) * channels * static_cast<std::size_t>(res) * res;
    std::vector<std::uint8_t> pixels(npix);
    in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(npix));
    if (!in) throw std::runtime_error("dataset file truncated while reading pixels");
    ds.images = Tensor<float>({static_cast<int>(count), channels, res, res});
    for (std::size_t i = 0; i < npix; ++i) ds.images.data[i] = static_cast<float>(pixels[i]) / 255.0f;
    ds.validate();
    return ds;
}

}  // namespace deft
