#include "trajrep/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

namespace trajrep {

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "grid_only") return Variant::grid_only;
  if (s == "road_only") return Variant::road_only;
  throw std::invalid_argument("unknown model variant: " + s);
}

std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::grid_only: return "grid_only";
    case Variant::road_only: return "road_only";
  }
  return "?";
}

Tensor build_grid_image(const GridSpec& spec, const std::vector<std::int64_t>& flow) {
  if (static_cast<int>(flow.size()) != spec.num_cells()) {
    throw std::invalid_argument("build_grid_image: flow size " + std::to_string(flow.size()) +
                                " != cells " + std::to_string(spec.num_cells()));
  }
  double max_log = 0.0;
  for (auto c : flow) max_log = std::max(max_log, std::log1p(static_cast<double>(c)));
  Tensor img({spec.rows, spec.cols, 3});
  for (int r = 0; r < spec.rows; ++r) {
    for (int c = 0; c < spec.cols; ++c) {
      img.at(r, c, 0) = spec.cols > 1 ? static_cast<double>(c) / (spec.cols - 1) : 0.0;
      img.at(r, c, 1) = spec.rows > 1 ? static_cast<double>(r) / (spec.rows - 1) : 0.0;
      const double lg = std::log1p(static_cast<double>(flow[static_cast<std::size_t>(r * spec.cols + c)]));
      img.at(r, c, 2) = max_log > 0.0 ? lg / max_log : 0.0;
    }
  }
  return img;
}

Tensor build_road_features(const RoadNetwork& net) {
  const int V = net.size();
  Tensor f({V, 14});
  auto scalar = [&](int col, auto get) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& s : net.segments) {
      lo = std::min(lo, get(s));
      hi = std::max(hi, get(s));
    }
    for (int i = 0; i < V; ++i) {
      const double v = get(net.segments[static_cast<std::size_t>(i)]);
      f.at(i, col) = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    }
  };
  scalar(0, [](const RoadSegment& s) { return s.maxspeed; });
  scalar(1, [](const RoadSegment& s) { return s.avg_travel_time; });
  scalar(2, [](const RoadSegment& s) { return s.direction; });
  scalar(3, [](const RoadSegment& s) { return static_cast<double>(s.out_degree); });
  scalar(4, [](const RoadSegment& s) { return static_cast<double>(s.in_degree); });
  scalar(5, [](const RoadSegment& s) { return s.length_m; });
  for (int i = 0; i < V; ++i) {
    f.at(i, 6 + net.segments[static_cast<std::size_t>(i)].road_type) = 1.0;
  }
  return f;
}

Tensor sinusoidal_positions(int len, int dim) {
  Tensor pe({len, dim});
  for (int pos = 0; pos < len; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / dim);
      pe.at(pos, i) = std::sin(pos * freq);
      if (i + 1 < dim) pe.at(pos, i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

namespace {

// The neutral road-type row used for summary and padding slots.
constexpr int kNeutralType = kNumRoadTypes;

}  // namespace

Model::Model(const RunConfig& cfg, const GridSpec& spec, const RoadNetwork& net,
             const std::vector<std::int64_t>& flow, Variant variant)
    : cfg_(cfg), spec_(spec), variant_(variant), num_segments_(net.size()) {
  cfg_.validate();
  const int h = cfg_.hidden_dim, d = cfg_.embed_dim;
  std::mt19937_64 rng(cfg_.seed);
  auto add = [&](const std::string& name, std::vector<int> shape, int fan_in) {
    const double bound = std::sqrt(1.0 / std::max(fan_in, 1));
    params.add(name, Tensor::uniform(shape, -bound, bound, rng));
  };
  auto add_zero = [&](const std::string& name, std::vector<int> shape) {
    params.add(name, Tensor::zeros(shape));
  };
  auto add_transformer = [&](const std::string& prefix, int layers, int dim) {
    for (int l = 0; l < layers; ++l) {
      const std::string lp = prefix + ".l" + std::to_string(l) + ".";
      params.add(lp + "ln1.g", Tensor::full({dim}, 1.0));
      add_zero(lp + "ln1.b", {dim});
      for (const char* m : {"att.wq", "att.wk", "att.wv", "att.wo"}) add(lp + m, {dim, dim}, dim);
      for (const char* m : {"att.bq", "att.bk", "att.bv", "att.bo"}) add_zero(lp + m, {dim});
      params.add(lp + "ln2.g", Tensor::full({dim}, 1.0));
      add_zero(lp + "ln2.b", {dim});
      add(lp + "ffn.w1", {dim, 4 * dim}, dim);
      add_zero(lp + "ffn.b1", {4 * dim});
      add(lp + "ffn.w2", {4 * dim, dim}, 4 * dim);
      add_zero(lp + "ffn.b2", {dim});
    }
    params.add(prefix + ".lnf.g", Tensor::full({dim}, 1.0));
    add_zero(prefix + ".lnf.b", {dim});
  };

  const bool has_grid = variant_ != Variant::road_only;
  const bool has_road = variant_ != Variant::grid_only;

  if (has_grid) {
    grid_image_ = build_grid_image(spec_, flow);
    constexpr int kConvCh = 64;
    add("grid.conv1.k", {3, 3, 3, kConvCh}, 3 * 3 * 3);
    add_zero("grid.conv1.b", {kConvCh});
    add("grid.conv2.k", {3, 3, kConvCh, kConvCh}, 3 * 3 * kConvCh);
    add_zero("grid.conv2.b", {kConvCh});
    add("grid.table.w1", {kConvCh, h}, kConvCh);
    add_zero("grid.table.b1", {h});
    add("grid.table.w2", {h, h}, h);
    add_zero("grid.table.b2", {h});
    add("grid.fuse.w", {h + 4, h}, h + 4);
    add_zero("grid.fuse.b", {h});
    add("grid.t2v.w1", {1, h / 2}, 1);
    add_zero("grid.t2v.b1", {h / 2});
    add("grid.t2v.w2", {1, h - h / 2}, 1);
    add_zero("grid.t2v.b2", {h - h / 2});
    add("grid.cls", {h}, h);
    add_transformer("grid", cfg_.grid_layers, h);
    add("grid.out.w", {h, d}, h);
    add_zero("grid.out.b", {d});
  }
  if (has_road) {
    road_features_ = build_road_features(net);
    seg_type_.resize(static_cast<std::size_t>(net.size()));
    for (int i = 0; i < net.size(); ++i) {
      seg_type_[static_cast<std::size_t>(i)] = net.segments[static_cast<std::size_t>(i)].road_type;
    }
    // undirected neighborhoods with self-loops for the GAT
    auto nbr = std::make_shared<std::vector<std::vector<int>>>(
        static_cast<std::size_t>(net.size()));
    auto preds = net.predecessors();
    for (int i = 0; i < net.size(); ++i) {
      std::set<int> ns{i};
      for (int j : net.successors[static_cast<std::size_t>(i)]) ns.insert(j);
      for (int j : preds[static_cast<std::size_t>(i)]) ns.insert(j);
      (*nbr)[static_cast<std::size_t>(i)].assign(ns.begin(), ns.end());
    }
    gat_nbr_ = std::move(nbr);

    add("road.in.w", {14, h}, 14);
    add_zero("road.in.b", {h});
    const int heads = cfg_.road_heads, dh = h / heads;
    for (int l = 0; l < cfg_.gat_layers; ++l) {
      for (int k = 0; k < heads; ++k) {
        const std::string hp = "road.gat.l" + std::to_string(l) + ".h" + std::to_string(k) + ".";
        add(hp + "w", {h, dh}, h);
        add(hp + "a_src", {dh, 1}, dh);
        add(hp + "a_dst", {dh, 1}, dh);
      }
    }
    add("road.eday", {1440, h}, h);
    add("road.eweek", {7, h}, h);
    add("road.etype", {kNumRoadTypes + 1, h}, h);
    add("road.type.wq", {h, h}, h);
    add("road.type.wk", {h, h}, h);
    add("road.cls", {h}, h);
    add("road.mask", {h}, h);
    add_transformer("road", cfg_.road_layers, h);
    add("road.out.w", {h, d}, h);
    add_zero("road.out.b", {d});
  }
  if (variant_ == Variant::full) {
    for (int l = 0; l < cfg_.interactor_layers; ++l) {
      const std::string lp = "inter.l" + std::to_string(l) + ".";
      params.add(lp + "lnq.g", Tensor::full({d}, 1.0));
      add_zero(lp + "lnq.b", {d});
      params.add(lp + "lnkv.g", Tensor::full({d}, 1.0));
      add_zero(lp + "lnkv.b", {d});
      for (const char* m : {"att.wq", "att.wk", "att.wv", "att.wo"}) add(lp + m, {d, d}, d);
      for (const char* m : {"att.bq", "att.bk", "att.bv", "att.bo"}) add_zero(lp + m, {d});
      params.add(lp + "ln2.g", Tensor::full({d}, 1.0));
      add_zero(lp + "ln2.b", {d});
      add(lp + "ffn.w1", {d, 4 * d}, d);
      add_zero(lp + "ffn.b1", {4 * d});
      add(lp + "ffn.w2", {4 * d, d}, 4 * d);
      add_zero(lp + "ffn.b2", {d});
    }
    params.add("inter.lnf.g", Tensor::full({d}, 1.0));
    add_zero("inter.lnf.b", {d});
  }
  if (has_grid && variant_ == Variant::grid_only) add("grid.mask", {h}, h);
  // masked-reconstruction vocabulary: road segments, or grid cells when no
  // road encoder exists
  const int vocab = has_road ? num_segments_ : spec_.num_cells();
  add("mlm.w", {d, vocab}, d);
  add_zero("mlm.b", {vocab});
  params.add("temp.log", Tensor::full({1}, std::log(cfg_.temperature)));
  // downstream heads
  add("tte.w1", {d, h}, d);
  add_zero("tte.b1", {h});
  add("tte.w2", {h, 1}, h);
  add_zero("tte.b2", {1});
  add("cls.w", {d, std::max(cfg_.synth_classes, 2)}, d);
  add_zero("cls.b", {std::max(cfg_.synth_classes, 2)});
}

Var Model::grid_table(ParamBinding& p) const {
  Tape& t = p.tape();
  Var img = t.constant(grid_image_);
  Var c1 = t.relu(t.conv2d_same(img, p("grid.conv1.k"), p("grid.conv1.b")));
  Var c2 = t.relu(t.conv2d_same(c1, p("grid.conv2.k"), p("grid.conv2.b")));
  Var flat = t.reshape(c2, {spec_.num_cells(), t.val(c2).dim(2)});
  Var m1 = t.relu(t.add_rowvec(t.matmul(flat, p("grid.table.w1")), p("grid.table.b1")));
  return t.add_rowvec(t.matmul(m1, p("grid.table.w2")), p("grid.table.b2"));
}

Var Model::road_table(ParamBinding& p) const {
  Tape& t = p.tape();
  Var x = t.add_rowvec(t.matmul(t.constant(road_features_), p("road.in.w")), p("road.in.b"));
  const int heads = cfg_.road_heads;
  for (int l = 0; l < cfg_.gat_layers; ++l) {
    std::vector<Var> head_outs;
    for (int k = 0; k < heads; ++k) {
      const std::string hp = "road.gat.l" + std::to_string(l) + ".h" + std::to_string(k) + ".";
      Var wh = t.matmul(x, p(hp + "w"));
      Var s_src = t.matmul(wh, p(hp + "a_src"));
      Var s_dst = t.matmul(wh, p(hp + "a_dst"));
      head_outs.push_back(t.gat_head(wh, s_src, s_dst, gat_nbr_, 0.2));
    }
    Var cat = head_outs[0];
    for (std::size_t k = 1; k < head_outs.size(); ++k) cat = t.concat_cols(cat, head_outs[k]);
    x = l + 1 < cfg_.gat_layers ? t.relu(cat) : cat;
  }
  return x;
}

// Everything constant about a packed batch: table lookup indices, indicator
// masks for summary/masked/token slots, position encodings, side features.
struct Model::Packed {
  int batch = 0, stride = 0, rows = 0;
  std::vector<int> ids;
  Tensor cls_ind;   // [R, 1]
  Tensor mask_ind;  // [R, 1]
  Tensor keep_emb;  // [R, dim]: 1 where the table embedding survives
  Tensor tok_keep;  // [R, dim]: 1 on real token rows (time terms apply here)
  Tensor posenc;    // [R, dim]
  Tensor feat;      // grid: [R, 4]
  Tensor tcol;      // grid: [R, 1]
  std::vector<int> day_idx, week_idx, type_idx;
  std::vector<std::uint8_t> valid;
  std::vector<int> summary_rows;
};

namespace {

template <typename Token>
void pack_common(Model::Packed& pk, const std::vector<std::vector<Token>>& batch,
                 const std::vector<MaskPlan>* masks, int dim) {
  if (batch.empty()) throw std::invalid_argument("forward: empty batch");
  if (masks && masks->size() != batch.size()) {
    throw std::invalid_argument("forward: mask plans do not match batch size");
  }
  int max_len = 0;
  for (const auto& seq : batch) {
    if (seq.empty()) throw std::invalid_argument("forward: empty trajectory in batch");
    max_len = std::max(max_len, static_cast<int>(seq.size()));
  }
  pk.batch = static_cast<int>(batch.size());
  pk.stride = max_len + 1;
  pk.rows = pk.batch * pk.stride;
  pk.ids.assign(static_cast<std::size_t>(pk.rows), 0);
  pk.cls_ind = Tensor::zeros({pk.rows, 1});
  pk.mask_ind = Tensor::zeros({pk.rows, 1});
  pk.keep_emb = Tensor::zeros({pk.rows, dim});
  pk.tok_keep = Tensor::zeros({pk.rows, dim});
  pk.valid.assign(static_cast<std::size_t>(pk.rows), 0);
  const Tensor pe = sinusoidal_positions(pk.stride, dim);
  pk.posenc = Tensor::zeros({pk.rows, dim});
  for (int s = 0; s < pk.batch; ++s) {
    const auto& seq = batch[static_cast<std::size_t>(s)];
    const int base = s * pk.stride;
    pk.summary_rows.push_back(base);
    pk.cls_ind.at(base, 0) = 1.0;
    pk.valid[static_cast<std::size_t>(base)] = 1;
    std::set<int> masked;
    if (masks) {
      for (int pos : (*masks)[static_cast<std::size_t>(s)].positions) {
        if (pos < 0 || pos >= static_cast<int>(seq.size())) {
          throw std::invalid_argument("forward: mask position out of range");
        }
        masked.insert(pos);
      }
    }
    for (int i = 0; i < static_cast<int>(seq.size()); ++i) {
      const int r = base + 1 + i;
      pk.valid[static_cast<std::size_t>(r)] = 1;
      const bool is_masked = masked.count(i) > 0;
      if (is_masked) pk.mask_ind.at(r, 0) = 1.0;
      for (int c = 0; c < dim; ++c) {
        pk.tok_keep.at(r, c) = 1.0;
        if (!is_masked) pk.keep_emb.at(r, c) = 1.0;
      }
    }
    for (int i = 0; i < pk.stride; ++i) {
      for (int c = 0; c < dim; ++c) pk.posenc.at(base + i, c) = pe.at(i, c);
    }
  }
}

}  // namespace

Var Model::maybe_dropout(ParamBinding& p, Var x, std::mt19937_64* rng) const {
  if (!rng || cfg_.dropout <= 0.0) return x;
  return p.tape().dropout(x, cfg_.dropout, *rng);
}

Var Model::attention(ParamBinding& p, const std::string& prefix, int heads, Var q_in, Var kv_in,
                     int q_stride, int kv_stride, int batch,
                     const std::vector<std::uint8_t>& kv_valid,
                     const std::vector<Var>* extra_logits, int dim) const {
  Tape& t = p.tape();
  Var q = t.add_rowvec(t.matmul(q_in, p(prefix + ".wq")), p(prefix + ".bq"));
  Var k = t.add_rowvec(t.matmul(kv_in, p(prefix + ".wk")), p(prefix + ".bk"));
  Var v = t.add_rowvec(t.matmul(kv_in, p(prefix + ".wv")), p(prefix + ".bv"));
  const int dh = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var out{-1};
  for (int s = 0; s < batch; ++s) {
    Var qs = t.slice_rows(q, s * q_stride, (s + 1) * q_stride);
    Var ks = t.slice_rows(k, s * kv_stride, (s + 1) * kv_stride);
    Var vs = t.slice_rows(v, s * kv_stride, (s + 1) * kv_stride);
    const std::vector<std::uint8_t> vmask(
        kv_valid.begin() + s * kv_stride, kv_valid.begin() + (s + 1) * kv_stride);
    Var seq_out{-1};
    for (int hd = 0; hd < heads; ++hd) {
      Var qh = t.slice_cols(qs, hd * dh, (hd + 1) * dh);
      Var kh = t.slice_cols(ks, hd * dh, (hd + 1) * dh);
      Var vh = t.slice_cols(vs, hd * dh, (hd + 1) * dh);
      Var logits = t.scale(t.matmul_nt(qh, kh), inv_sqrt);
      if (extra_logits) logits = t.add(logits, (*extra_logits)[static_cast<std::size_t>(s)]);
      Var alpha = t.softmax_rows(logits, &vmask);
      Var oh = t.matmul(alpha, vh);
      seq_out = hd == 0 ? oh : t.concat_cols(seq_out, oh);
    }
    out = s == 0 ? seq_out : t.concat_rows(out, seq_out);
  }
  return t.add_rowvec(t.matmul(out, p(prefix + ".wo")), p(prefix + ".bo"));
}

Var Model::transformer_stack(ParamBinding& p, const std::string& prefix, int layers, int heads,
                             Var x, const Packed& pack, Var type_bias_seed,
                             std::mt19937_64* dropout_rng) const {
  Tape& t = p.tape();
  // Road-type attention bias, one [stride, stride] matrix per sequence,
  // shared by every layer.
  std::vector<Var> bias;
  const bool with_bias = type_bias_seed.i >= 0;
  if (with_bias) {
    Var tq = t.matmul(type_bias_seed, p("road.type.wq"));
    Var tk = t.matmul(type_bias_seed, p("road.type.wk"));
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden_dim));
    for (int s = 0; s < pack.batch; ++s) {
      Var tqs = t.slice_rows(tq, s * pack.stride, (s + 1) * pack.stride);
      Var tks = t.slice_rows(tk, s * pack.stride, (s + 1) * pack.stride);
      bias.push_back(t.scale(t.matmul_nt(tqs, tks), inv_sqrt_h));
    }
  }
  for (int l = 0; l < layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l) + ".";
    Var h1 = t.layer_norm_rows(x, p(lp + "ln1.g"), p(lp + "ln1.b"));
    Var att = attention(p, lp + "att", heads, h1, h1, pack.stride, pack.stride, pack.batch,
                        pack.valid, with_bias ? &bias : nullptr, t.val(x).dim(1));
    x = t.add(x, maybe_dropout(p, att, dropout_rng));
    Var h2 = t.layer_norm_rows(x, p(lp + "ln2.g"), p(lp + "ln2.b"));
    Var f1 = t.relu(t.add_rowvec(t.matmul(h2, p(lp + "ffn.w1")), p(lp + "ffn.b1")));
    Var f2 = t.add_rowvec(t.matmul(f1, p(lp + "ffn.w2")), p(lp + "ffn.b2"));
    x = t.add(x, maybe_dropout(p, f2, dropout_rng));
  }
  return t.layer_norm_rows(x, p(prefix + ".lnf.g"), p(prefix + ".lnf.b"));
}

EncoderOut Model::grid_forward(ParamBinding& p, const std::vector<std::vector<GridToken>>& batch,
                               Var table, const std::vector<MaskPlan>* masks,
                               std::mt19937_64* dropout_rng) const {
  if (variant_ == Variant::road_only) throw std::logic_error("grid encoder absent in this variant");
  if (masks && variant_ != Variant::grid_only) {
    throw std::logic_error("grid masking is only used by the grid-only variant");
  }
  Tape& t = p.tape();
  const int h = cfg_.hidden_dim;
  Packed pk;
  pack_common(pk, batch, masks, h);
  pk.feat = Tensor::zeros({pk.rows, 4});
  pk.tcol = Tensor::zeros({pk.rows, 1});
  const double xspan = spec_.cols * spec_.cell_m, yspan = spec_.rows * spec_.cell_m;
  const LocalProjection proj = spec_.projection();
  for (int s = 0; s < pk.batch; ++s) {
    const auto& seq = batch[static_cast<std::size_t>(s)];
    for (int i = 0; i < static_cast<int>(seq.size()); ++i) {
      const auto& tok = seq[static_cast<std::size_t>(i)];
      if (tok.cell_id < 0 || tok.cell_id >= spec_.num_cells()) {
        throw std::out_of_range("grid_forward: cell id " + std::to_string(tok.cell_id));
      }
      const int r = s * pk.stride + 1 + i;
      pk.ids[static_cast<std::size_t>(r)] = tok.cell_id;
      double x_m = 0.0, y_m = 0.0;
      proj.to_meters(tok.feat_x, tok.feat_y, x_m, y_m);
      pk.feat.at(r, 0) = x_m / xspan;
      pk.feat.at(r, 1) = y_m / yspan;
      pk.feat.at(r, 2) = tok.feat_d / 1000.0;  // kilometers
      pk.feat.at(r, 3) = tok.feat_r / 360.0;
      // time-of-day fraction; absolute epoch days would swamp the linear term
      pk.tcol.at(r, 0) = std::fmod(tok.t, 86400.0) / 86400.0;
    }
  }
  Var gathered = t.gather_rows(table, pk.ids);
  Var fused = t.add_rowvec(
      t.matmul(t.concat_cols(gathered, t.constant(pk.feat)), p("grid.fuse.w")), p("grid.fuse.b"));
  Var x = t.mul(fused, t.constant(pk.keep_emb));
  x = t.add(x, t.matmul(t.constant(pk.cls_ind), t.reshape(p("grid.cls"), {1, h})));
  if (masks) {
    x = t.add(x, t.matmul(t.constant(pk.mask_ind), t.reshape(p("grid.mask"), {1, h})));
  }
  Var tc = t.constant(pk.tcol);
  Var lin = t.add_rowvec(t.matmul(tc, p("grid.t2v.w1")), p("grid.t2v.b1"));
  Var per = t.sin(t.add_rowvec(t.matmul(tc, p("grid.t2v.w2")), p("grid.t2v.b2")));
  x = t.add(x, t.mul(t.concat_cols(lin, per), t.constant(pk.tok_keep)));
  x = t.add(x, t.constant(pk.posenc));
  x = transformer_stack(p, "grid", cfg_.grid_layers, cfg_.grid_heads, x, pk, Var{-1}, dropout_rng);
  Var z = t.add_rowvec(t.matmul(x, p("grid.out.w")), p("grid.out.b"));
  EncoderOut out;
  out.z = z;
  out.summary = t.gather_rows(z, pk.summary_rows);
  out.batch = pk.batch;
  out.stride = pk.stride;
  out.valid = pk.valid;
  return out;
}

EncoderOut Model::road_forward(ParamBinding& p, const std::vector<std::vector<RoadToken>>& batch,
                               Var table, const std::vector<MaskPlan>* masks,
                               std::mt19937_64* dropout_rng) const {
  if (variant_ == Variant::grid_only) throw std::logic_error("road encoder absent in this variant");
  Tape& t = p.tape();
  const int h = cfg_.hidden_dim;
  Packed pk;
  pack_common(pk, batch, masks, h);
  pk.day_idx.assign(static_cast<std::size_t>(pk.rows), 0);
  pk.week_idx.assign(static_cast<std::size_t>(pk.rows), 0);
  pk.type_idx.assign(static_cast<std::size_t>(pk.rows), kNeutralType);
  for (int s = 0; s < pk.batch; ++s) {
    const auto& seq = batch[static_cast<std::size_t>(s)];
    for (int i = 0; i < static_cast<int>(seq.size()); ++i) {
      const auto& tok = seq[static_cast<std::size_t>(i)];
      if (tok.segment_id < 0 || tok.segment_id >= num_segments_) {
        throw std::out_of_range("road_forward: segment id " + std::to_string(tok.segment_id));
      }
      if (tok.minute_of_day < 0 || tok.minute_of_day >= 1440 || tok.day_of_week < 0 ||
          tok.day_of_week >= 7) {
        throw std::out_of_range("road_forward: time index out of range");
      }
      if (tok.road_type < 0 || tok.road_type >= kNumRoadTypes) {
        throw std::out_of_range("road_forward: road type " + std::to_string(tok.road_type));
      }
      const int r = s * pk.stride + 1 + i;
      pk.ids[static_cast<std::size_t>(r)] = tok.segment_id;
      pk.day_idx[static_cast<std::size_t>(r)] = tok.minute_of_day;
      pk.week_idx[static_cast<std::size_t>(r)] = tok.day_of_week;
      pk.type_idx[static_cast<std::size_t>(r)] = tok.road_type;
    }
  }
  Var gathered = t.gather_rows(table, pk.ids);
  Var x = t.mul(gathered, t.constant(pk.keep_emb));
  x = t.add(x, t.matmul(t.constant(pk.cls_ind), t.reshape(p("road.cls"), {1, h})));
  if (masks) {
    x = t.add(x, t.matmul(t.constant(pk.mask_ind), t.reshape(p("road.mask"), {1, h})));
  }
  Var tok_keep = t.constant(pk.tok_keep);
  x = t.add(x, t.mul(t.gather_rows(p("road.eday"), pk.day_idx), tok_keep));
  x = t.add(x, t.mul(t.gather_rows(p("road.eweek"), pk.week_idx), tok_keep));
  x = t.add(x, t.constant(pk.posenc));
  Var type_seed{-1};
  if (use_type_bias) {
    type_seed = t.add(t.gather_rows(p("road.etype"), pk.type_idx), t.constant(pk.posenc));
  }
  x = transformer_stack(p, "road", cfg_.road_layers, cfg_.road_heads, x, pk, type_seed,
                        dropout_rng);
  Var z = t.add_rowvec(t.matmul(x, p("road.out.w")), p("road.out.b"));
  EncoderOut out;
  out.z = z;
  out.summary = t.gather_rows(z, pk.summary_rows);
  out.batch = pk.batch;
  out.stride = pk.stride;
  out.valid = pk.valid;
  return out;
}

EncoderOut Model::interact(ParamBinding& p, const EncoderOut& road, const EncoderOut& grid,
                           std::mt19937_64* dropout_rng) const {
  if (variant_ != Variant::full) throw std::logic_error("interactor absent in this variant");
  if (road.batch != grid.batch) throw std::invalid_argument("interact: batch size mismatch");
  Tape& t = p.tape();
  const int d = cfg_.embed_dim;
  Var x = road.z;
  for (int l = 0; l < cfg_.interactor_layers; ++l) {
    const std::string lp = "inter.l" + std::to_string(l) + ".";
    Var qn = t.layer_norm_rows(x, p(lp + "lnq.g"), p(lp + "lnq.b"));
    Var kn = t.layer_norm_rows(grid.z, p(lp + "lnkv.g"), p(lp + "lnkv.b"));
    Var att = attention(p, lp + "att", cfg_.interactor_heads, qn, kn, road.stride, grid.stride,
                        road.batch, grid.valid, nullptr, d);
    x = t.add(x, maybe_dropout(p, att, dropout_rng));
    Var h2 = t.layer_norm_rows(x, p(lp + "ln2.g"), p(lp + "ln2.b"));
    Var f1 = t.relu(t.add_rowvec(t.matmul(h2, p(lp + "ffn.w1")), p(lp + "ffn.b1")));
    Var f2 = t.add_rowvec(t.matmul(f1, p(lp + "ffn.w2")), p(lp + "ffn.b2"));
    x = t.add(x, maybe_dropout(p, f2, dropout_rng));
  }
  x = t.layer_norm_rows(x, p("inter.lnf.g"), p("inter.lnf.b"));
  EncoderOut out;
  out.z = x;
  std::vector<int> summary_rows;
  for (int s = 0; s < road.batch; ++s) summary_rows.push_back(s * road.stride);
  out.summary = t.gather_rows(x, summary_rows);
  out.batch = road.batch;
  out.stride = road.stride;
  out.valid = road.valid;
  return out;
}

Var Model::mlm_logits(ParamBinding& p, Var z, const std::vector<int>& rows) const {
  Tape& t = p.tape();
  Var picked = t.gather_rows(z, rows);
  return t.add_rowvec(t.matmul(picked, p("mlm.w")), p("mlm.b"));
}

Var Model::tte_head(ParamBinding& p, Var reps) const {
  Tape& t = p.tape();
  Var h1 = t.relu(t.add_rowvec(t.matmul(reps, p("tte.w1")), p("tte.b1")));
  return t.add_rowvec(t.matmul(h1, p("tte.w2")), p("tte.b2"));
}

Var Model::cls_head(ParamBinding& p, Var reps) const {
  Tape& t = p.tape();
  return t.add_rowvec(t.matmul(reps, p("cls.w")), p("cls.b"));
}

Var Model::temperature(ParamBinding& p) const {
  Tape& t = p.tape();
  return t.exp(t.clamp(p("temp.log"), std::log(0.01), std::log(1.0)));
}

Var Model::represent(ParamBinding& p, const std::vector<std::vector<GridToken>>& grid_batch,
                     const std::vector<std::vector<RoadToken>>& road_batch) const {
  switch (variant_) {
    case Variant::grid_only:
      return grid_forward(p, grid_batch, grid_table(p)).summary;
    case Variant::road_only:
      return road_forward(p, road_batch, road_table(p)).summary;
    case Variant::full: {
      EncoderOut g = grid_forward(p, grid_batch, grid_table(p));
      EncoderOut r = road_forward(p, road_batch, road_table(p));
      return interact(p, r, g).summary;
    }
  }
  throw std::logic_error("unreachable");
}

std::vector<double> Model::encode(const std::vector<GridToken>& grid_toks,
                                  const std::vector<RoadToken>& road_toks) const {
  Tape t;
  ParamBinding p(t, const_cast<ParamStore&>(params));
  std::vector<std::vector<GridToken>> gb;
  std::vector<std::vector<RoadToken>> rb;
  if (variant_ != Variant::road_only) gb.push_back(grid_toks);
  if (variant_ != Variant::grid_only) rb.push_back(road_toks);
  // keep pack_common's batch check satisfied for the unused side
  if (gb.empty()) gb.push_back({});
  if (rb.empty()) rb.push_back({});
  Var rep = represent(p, gb, rb);
  const Tensor& v = t.val(rep);
  return std::vector<double>(v.data(), v.data() + v.numel());
}

}  // namespace trajrep
