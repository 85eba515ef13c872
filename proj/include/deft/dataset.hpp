#ifndef DEFT_DATASET_HPP
#define DEFT_DATASET_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "deft/rng.hpp"
#include "deft/tensor.hpp"

namespace deft {

struct Factor {
    std::string name;
    int cardinality = 1;
    std::vector<std::string> value_names;  // optional, e.g. shape names
};

struct FactorSchema {
    std::vector<Factor> factors;

    void validate() const;
    int num_factors() const { return static_cast<int>(factors.size()); }
    int index_of(const std::string& name) const;  // -1 if absent
    std::int64_t grid_size() const;
};

// Images with per-image discrete factor labels.
struct LabeledDataset {
    Tensor<float> images;               // [N, C, H, W], values in [0,1]
    std::vector<std::uint16_t> labels;  // row-major [N, num_factors]
    FactorSchema schema;

    int n() const { return images.rank() == 4 ? images.extent(0) : 0; }
    int channels() const { return images.extent(1); }
    int resolution() const { return images.extent(3); }
    int label(int row, int f) const {
        return labels[static_cast<std::size_t>(row) * static_cast<std::size_t>(schema.num_factors()) +
                      static_cast<std::size_t>(f)];
    }
    std::vector<int> label_column(int f) const;
    Tensor<float> gather_images(const std::vector<int>& rows) const;  // [B,C,H,W]
    LabeledDataset subset(const std::vector<int>& rows) const;

    void validate() const;
};

// Index -> continuous render parameter maps shared by all generators.
// Grid positions land on integer pixel coordinates so that moving one
// position step translates the sprite by a whole number of pixels.
double grid_center_px(int idx, int card, int resolution);
double scale_radius_px(int idx, int card, int resolution);
double orientation_rad(int idx, int card);

struct RenderParams {
    int shape_id = 0;  // 0 square, 1 ellipse, 2 triangle
    double circumradius_px = 0;
    double angle_rad = 0;
    double cx = 0, cy = 0;
};

// Deterministic antialiased rasterizer: 4x4 supersampling, then quantized to
// the 256-level intensity grid so saved files reload bit-identically.
Tensor<float> render_sprite(const RenderParams& p, int resolution);

// Index-space renderer over the canonical factor set.
Tensor<float> render_shape(int shape_id, int scale_idx, int scale_card, int orient_idx, int orient_card,
                           int posx_idx, int posx_card, int posy_idx, int posy_card, int resolution);

// Cartesian-product dataset: row i's labels are the mixed-radix digits of i
// with the first factor most significant. Unknown factor names are rejected.
LabeledDataset generate_grid_dataset(const FactorSchema& schema, int resolution);

// Triangle dataset with posX/posY free on a half-pixel grid (never on the
// canvas center) and orientation = atan2(posY - cy, posX - cx) quantized to
// `orientation_bins` bins over (-pi, pi].
LabeledDataset generate_triangle_correlated(int resolution, int grid, int orientation_bins = 8);

int quantize_angle(double theta, int bins);
double bin_center_angle(int bin, int bins);

// Draws one random base tuple and returns the slice obtained by sweeping
// factor_index over its full cardinality. Requires every swept tuple to
// exist in the dataset (true for grid datasets).
LabeledDataset fixed_factor_batch(const LabeledDataset& ds, int factor_index, Rng& rng);

// Container format "DEFTDATA"; see docs/formats.md. Byte-exact round trip.
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

}  // namespace deft

#endif
