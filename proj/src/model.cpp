#include "peac/model.hpp"

#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "peac/errors.hpp"
#include "peac/geometry.hpp"

namespace peac {

void EncoderConfig::validate() const {
  std::ostringstream msg;
  if (depth < 0) msg << "encoder depth must be >= 0";
  else if (dim < 1) msg << "encoder dim must be >= 1";
  else if (heads < 1 || dim % heads != 0) msg << "encoder heads must divide dim";
  else if (patch < 1) msg << "encoder patch side must be >= 1";
  else if (grid < 1) msg << "encoder grid must be >= 1";
  else if (mlp_ratio < 1) msg << "encoder mlp_ratio must be >= 1";
  else if (expander_hidden < 0 || embed_dim < 0) msg << "expander widths must be >= 0";
  else return;
  throw ConfigError(msg.str());
}

EncoderConfig EncoderConfig::desk() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::paper_vit_b() {
  EncoderConfig c;
  c.depth = 12;
  c.dim = 768;
  c.heads = 12;
  c.patch = 16;
  c.grid = 14;
  return c;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const Matrix& v : values) n += static_cast<std::size_t>(v.size());
  return n;
}

std::size_t ParamSet::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw std::out_of_range("no parameter named " + name);
}

bool ParamSet::same_shapes(const ParamSet& other) const {
  if (values.size() != other.values.size()) return false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].rows() != other.values[i].rows() || values[i].cols() != other.values[i].cols()) return false;
  }
  return true;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  out.names = names;
  out.values.reserve(values.size());
  for (const Matrix& v : values) out.values.push_back(Matrix::Zero(v.rows(), v.cols()));
  return out;
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Matrix& v : values) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
    const std::size_t n = static_cast<std::size_t>(v.size()) * sizeof(double);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

namespace {

struct Linear {
  int w = -1;
  int b = -1;
};

struct Norm {
  int gamma = -1;
  int beta = -1;
};

struct Block {
  Norm ln1;
  Linear qkv;
  Linear proj;
  Norm ln2;
  Linear fc1;
  Linear fc2;
};

struct Layout {
  Linear patch_embed;
  int pos = -1;
  std::vector<Block> blocks;
  Norm final_norm;
  Linear order_head;
  Linear restore_head;
  Linear global_mlp[3];
  Linear local_mlp[3];
};

enum class Init { Xavier, Zero, One, Position };

/// Walks the parameter list in registration order. With `out` set it also
/// allocates and initialises values; otherwise only indices are assigned.
class Registrar {
 public:
  Registrar(ParamSet* out, Rng* rng) : out_(out), rng_(rng) {}

  int add(const std::string& name, int rows, int cols, Init init) {
    const int idx = next_++;
    if (!out_) return idx;
    Matrix v(rows, cols);
    switch (init) {
      case Init::Xavier: {
        const double a = std::sqrt(6.0 / (rows + cols));
        std::uniform_real_distribution<double> dist(-a, a);
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = dist(*rng_);
        break;
      }
      case Init::Position: {
        std::normal_distribution<double> dist(0.0, 0.02);
        for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = dist(*rng_);
        break;
      }
      case Init::Zero: v.setZero(); break;
      case Init::One: v.setOnes(); break;
    }
    out_->names.push_back(name);
    out_->values.push_back(std::move(v));
    return idx;
  }

  Linear linear(const std::string& name, int in, int out) {
    Linear l;
    l.w = add(name + ".weight", in, out, Init::Xavier);
    l.b = add(name + ".bias", 1, out, Init::Zero);
    return l;
  }

  Norm norm(const std::string& name, int width) {
    Norm n;
    n.gamma = add(name + ".gamma", 1, width, Init::One);
    n.beta = add(name + ".beta", 1, width, Init::Zero);
    return n;
  }

 private:
  ParamSet* out_;
  Rng* rng_;
  int next_ = 0;
};

Layout register_params(const EncoderConfig& c, Registrar& reg) {
  Layout L;
  const int D = c.dim;
  L.patch_embed = reg.linear("patch_embed", c.patch * c.patch, D);
  L.pos = reg.add("pos_embed", c.tokens(), D, Init::Position);
  for (int i = 0; i < c.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    Block b;
    b.ln1 = reg.norm(p + ".norm1", D);
    b.qkv = reg.linear(p + ".attn.qkv", D, 3 * D);
    b.proj = reg.linear(p + ".attn.proj", D, D);
    b.ln2 = reg.norm(p + ".norm2", D);
    b.fc1 = reg.linear(p + ".mlp.fc1", D, c.mlp_ratio * D);
    b.fc2 = reg.linear(p + ".mlp.fc2", c.mlp_ratio * D, D);
    L.blocks.push_back(b);
  }
  L.final_norm = reg.norm("norm", D);
  L.order_head = reg.linear("order_head", D, c.tokens());
  L.restore_head = reg.linear("restore_head", D, c.patch * c.patch);
  const int H = c.hidden();
  L.global_mlp[0] = reg.linear("global_expander.0", D, H);
  L.global_mlp[1] = reg.linear("global_expander.1", H, H);
  L.global_mlp[2] = reg.linear("global_expander.2", H, c.out_dim());
  L.local_mlp[0] = reg.linear("local_expander.0", D, H);
  L.local_mlp[1] = reg.linear("local_expander.1", H, H);
  L.local_mlp[2] = reg.linear("local_expander.2", H, c.out_dim());
  return L;
}

Layout layout_for(const EncoderConfig& c) {
  Registrar reg(nullptr, nullptr);
  return register_params(c, reg);
}

ag::Var apply(std::span<const ag::Var> p, const Linear& l, ag::Var x) {
  return ag::add_row(ag::matmul(x, p[static_cast<std::size_t>(l.w)]), p[static_cast<std::size_t>(l.b)]);
}

ag::Var apply(std::span<const ag::Var> p, const Norm& n, ag::Var x) {
  return ag::layer_norm(x, p[static_cast<std::size_t>(n.gamma)], p[static_cast<std::size_t>(n.beta)]);
}

ag::Var expander(std::span<const ag::Var> p, const Linear (&mlp)[3], ag::Var x) {
  ag::Var h = ag::gelu(apply(p, mlp[0], x));
  h = ag::gelu(apply(p, mlp[1], h));
  return apply(p, mlp[2], h);
}

ag::Var attention(std::span<const ag::Var> p, const Block& b, ag::Var x, int heads) {
  const Eigen::Index D = x.cols();
  const Eigen::Index dh = D / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  ag::Var qkv = apply(p, b.qkv, x);
  std::vector<ag::Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    ag::Var q = ag::slice_cols(qkv, h * dh, dh);
    ag::Var k = ag::slice_cols(qkv, D + h * dh, dh);
    ag::Var v = ag::slice_cols(qkv, 2 * D + h * dh, dh);
    ag::Var attn = ag::softmax_rows(ag::scale(ag::matmul_nt(q, k), inv_sqrt));
    outs.push_back(ag::matmul(attn, v));
  }
  ag::Var merged = heads == 1 ? outs[0] : ag::hconcat(outs);
  return apply(p, b.proj, merged);
}

}  // namespace

ParamSet init_params(const EncoderConfig& config, Rng& rng) {
  config.validate();
  ParamSet out;
  Registrar reg(&out, &rng);
  register_params(config, reg);
  return out;
}

std::vector<ag::Var> bind_params(ag::Tape& tape, const ParamSet& params, bool trainable) {
  std::vector<ag::Var> vars;
  vars.reserve(params.size());
  for (const Matrix& v : params.values) vars.push_back(trainable ? tape.parameter(v) : tape.constant(v));
  return vars;
}

EncoderGraph encode(ag::Tape& tape, const EncoderConfig& config, std::span<const ag::Var> params,
                    const Matrix& patches, std::span<const int> slots, const EncodeOptions& options) {
  const Layout L = layout_for(config);
  if (params.size() != static_cast<std::size_t>(L.local_mlp[2].b) + 1)
    throw ShapeError("encode: parameter list does not match encoder config");
  if (patches.cols() != config.patch * config.patch)
    throw ShapeError("encode: patch width does not match encoder patch side");
  const Eigen::Index n = patches.rows();
  if (n < 1) throw ShapeError("encode: no tokens");

  std::vector<int> slot_ids;
  if (slots.empty()) {
    if (n > config.tokens()) throw ShapeError("encode: more tokens than positional slots");
    slot_ids.resize(static_cast<std::size_t>(n));
    std::iota(slot_ids.begin(), slot_ids.end(), 0);
  } else {
    if (static_cast<Eigen::Index>(slots.size()) != n) throw ShapeError("encode: one slot per token required");
    slot_ids.assign(slots.begin(), slots.end());
  }

  ag::Var x = apply(params, L.patch_embed, tape.constant(patches));
  if (config.positional) x = ag::add(x, ag::gather_rows(params[static_cast<std::size_t>(L.pos)], slot_ids));

  for (const Block& b : L.blocks) {
    x = ag::add(x, attention(params, b, apply(params, b.ln1, x), config.heads));
    ag::Var h = ag::gelu(apply(params, b.fc1, apply(params, b.ln2, x)));
    x = ag::add(x, apply(params, b.fc2, h));
  }

  EncoderGraph g;
  g.features = apply(params, L.final_norm, x);
  g.pooled = ag::mean_rows(g.features);
  if (options.expanders) {
    g.global_embed = expander(params, L.global_mlp, g.pooled);
    g.local_embeds = expander(params, L.local_mlp, g.features);
  }
  if (options.heads) {
    g.order_logits = apply(params, L.order_head, g.features);
    g.restored = apply(params, L.restore_head, g.features);
  }
  return g;
}

EncoderOutput encode_patches(const EncoderConfig& config, const ParamSet& params, const Matrix& patches,
                             std::span<const int> slots, const EncodeOptions& options) {
  ag::Tape tape;
  ag::NoGradGuard guard(tape);
  const std::vector<ag::Var> vars = bind_params(tape, params, false);
  const EncoderGraph g = encode(tape, config, vars, patches, slots, options);
  EncoderOutput out;
  out.patch_features = g.features.value();
  out.pooled = g.pooled.value().row(0);
  if (options.expanders) {
    out.global_embed = g.global_embed.value().row(0);
    out.local_embeds = g.local_embeds.value();
  }
  if (options.heads) {
    out.order_logits = g.order_logits.value();
    out.restored = g.restored.value();
  }
  return out;
}

EncoderOutput encode(const EncoderConfig& config, const ParamSet& params, const Image& crop,
                     const EncodeOptions& options) {
  if (crop.rows() != config.crop_side() || crop.cols() != config.crop_side()) {
    std::ostringstream msg;
    msg << "encode: expected " << config.crop_side() << "x" << config.crop_side() << " crop, got " << crop.rows()
        << "x" << crop.cols();
    throw ShapeError(msg.str());
  }
  return encode_patches(config, params, patchify(crop, config.patch), {}, options);
}

StudentTeacher make_student_teacher(const EncoderConfig& config, std::uint64_t seed, double ema_alpha) {
  if (!(ema_alpha > 0.0 && ema_alpha < 1.0)) throw ConfigError("ema_alpha must lie in (0, 1)");
  Rng rng = make_rng(seed, Stream::Init);
  StudentTeacher st;
  st.config = config;
  st.student = init_params(config, rng);
  st.teacher = st.student;
  st.ema_alpha = ema_alpha;
  return st;
}

void ema_update(const ParamSet& student, ParamSet& teacher, double alpha) {
  if (!student.same_shapes(teacher)) throw ShapeError("ema_update: student and teacher shapes differ");
  for (std::size_t i = 0; i < student.size(); ++i) {
    // Difference form: a teacher equal to the student stays bit-identical.
    teacher.values[i] += (1.0 - alpha) * (student.values[i] - teacher.values[i]);
  }
}

}  // namespace peac
