#pragma once

#include <memory>
#include <random>
#include <vector>

#include "trajrep/config.hpp"
#include "trajrep/optim.hpp"
#include "trajrep/tape.hpp"
#include "trajrep/traj.hpp"

namespace trajrep {

enum class Variant { full, grid_only, road_only };

Variant variant_from_string(const std::string& s);
std::string variant_to_string(Variant v);

// Normalized [H, W, 3] input image: cell-center x, cell-center y, log-scaled
// visit counts, all in [0, 1].
Tensor build_grid_image(const GridSpec& spec, const std::vector<std::int64_t>& flow);

// [|V|, 14]: six min-max-normalized scalar attributes followed by the 8-way
// road-type one-hot.
Tensor build_road_features(const RoadNetwork& net);

// Output of one encoder pass over a packed batch. Sequences are padded to a
// common length and laid out flat: row s * (L + 1) is sequence s's summary
// token, rows s * (L + 1) + 1 ... its tokens.
struct EncoderOut {
  Var z;                           // [B * (L + 1), d]
  Var summary;                     // [B, d], the summary-token rows
  int batch = 0;                   // B
  int stride = 0;                  // L + 1
  std::vector<std::uint8_t> valid; // per flat row; padding rows are 0
};

// The dual-expression trajectory model: a CNN + Transformer encoder over the
// grid expression, a GAT + type-biased Transformer over the road expression,
// and a cross-attention interactor that queries grid context from the road
// stream. Forward passes build onto a caller-owned tape so training and
// gradient checks share one code path.
class Model {
 public:
  Model(const RunConfig& cfg, const GridSpec& spec, const RoadNetwork& net,
        const std::vector<std::int64_t>& flow, Variant variant = Variant::full);

  ParamStore params;
  Variant variant() const { return variant_; }
  const RunConfig& config() const { return cfg_; }
  const GridSpec& grid_spec() const { return spec_; }
  int num_segments() const { return num_segments_; }

  // Cell-embedding table [H * W, h] recomputed through the CNN, so its
  // gradients reach the convolution kernels.
  Var grid_table(ParamBinding& p) const;
  // Segment-embedding table [|V|, h] recomputed through the GAT stack.
  Var road_table(ParamBinding& p) const;

  // masks, when given, replace masked tokens' segment embedding with the
  // learned mask embedding (time and position terms kept).
  EncoderOut grid_forward(ParamBinding& p, const std::vector<std::vector<GridToken>>& batch,
                          Var table, const std::vector<MaskPlan>* masks = nullptr,
                          std::mt19937_64* dropout_rng = nullptr) const;
  EncoderOut road_forward(ParamBinding& p, const std::vector<std::vector<RoadToken>>& batch,
                          Var table, const std::vector<MaskPlan>* masks = nullptr,
                          std::mt19937_64* dropout_rng = nullptr) const;

  // Cross-attention fusion; queries come from the road stream, keys/values
  // from the grid stream. Result has the road stream's layout.
  EncoderOut interact(ParamBinding& p, const EncoderOut& road, const EncoderOut& grid,
                      std::mt19937_64* dropout_rng = nullptr) const;

  // Token-level vocabulary logits for masked-reconstruction: [rows.size(), V]
  // where V is the segment count (or H * W cells for the grid-only variant).
  Var mlm_logits(ParamBinding& p, Var z, const std::vector<int>& rows) const;

  // Travel-time head (representation -> minutes) and classification head.
  Var tte_head(ParamBinding& p, Var reps) const;
  Var cls_head(ParamBinding& p, Var reps) const;

  // Final per-trajectory representation [B, d] for this model's variant:
  // interactor summary for the full model, the surviving encoder's summary
  // for ablations. Single unmasked forward of each encoder.
  Var represent(ParamBinding& p, const std::vector<std::vector<GridToken>>& grid_batch,
                const std::vector<std::vector<RoadToken>>& road_batch) const;

  // Convenience wrapper over represent() on a private tape.
  std::vector<double> encode(const std::vector<GridToken>& grid_toks,
                             const std::vector<RoadToken>& road_toks) const;

  // Contrastive temperature, recovered from its clamped log parameterization.
  Var temperature(ParamBinding& p) const;

  // Test hook: with the road-type attention parameters zeroed, disabling the
  // bias term must reproduce the same output.
  bool use_type_bias = true;

  struct Packed;

 private:
  Var transformer_stack(ParamBinding& p, const std::string& prefix, int layers, int heads, Var x,
                        const Packed& pack, Var type_bias_seed,
                        std::mt19937_64* dropout_rng) const;
  Var attention(ParamBinding& p, const std::string& prefix, int heads, Var q_in, Var kv_in,
                int q_stride, int kv_stride, int batch,
                const std::vector<std::uint8_t>& kv_valid, const std::vector<Var>* extra_logits,
                int dim) const;
  Var maybe_dropout(ParamBinding& p, Var x, std::mt19937_64* rng) const;

  RunConfig cfg_;
  GridSpec spec_;
  Variant variant_;
  int num_segments_ = 0;
  Tensor grid_image_;      // [H, W, 3]
  Tensor road_features_;   // [V, 14]
  std::shared_ptr<const std::vector<std::vector<int>>> gat_nbr_;
  std::vector<int> seg_type_;  // road type per segment
};

// Fixed sinusoidal position encoding table [len, dim].
Tensor sinusoidal_positions(int len, int dim);

}  // namespace trajrep
