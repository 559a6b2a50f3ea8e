#include "hardbc/train.hpp"

#include <Eigen/Core>
#include <json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

namespace hardbc::train {

namespace {

using Eigen::MatrixXd;
using MapM = Eigen::Map<MatrixXd>;
using MapCM = Eigen::Map<const MatrixXd>;

/// Deterministic uniform in [0,1): the top 53 bits of one mt19937_64 draw.
double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Flat offsets of layer l's weight block and bias block.
struct Layout {
  std::vector<std::size_t> w_off, b_off;
  std::size_t total = 0;
  explicit Layout(const std::vector<int>& layers) {
    for (std::size_t l = 1; l < layers.size(); ++l) {
      const auto rows = static_cast<std::size_t>(layers[l]);
      const auto cols = static_cast<std::size_t>(layers[l - 1]);
      w_off.push_back(total);
      total += rows * cols;
      b_off.push_back(total);
      total += rows;
    }
  }
};

}  // namespace

// ---- Ansatz -------------------------------------------------------------------

Ansatz::Ansatz(int n_outputs, const std::array<double, 4>& box,
               std::uint64_t seed, int hidden_layers, int hidden_width)
    : box_(box), seed_(seed) {
  if (n_outputs < 1 || hidden_layers < 1 || hidden_width < 1)
    throw geom::ConfigError("Ansatz: sizes must be positive");
  layers_.push_back(2);
  for (int l = 0; l < hidden_layers; ++l) layers_.push_back(hidden_width);
  layers_.push_back(n_outputs);

  const Layout lay(layers_);
  params_.assign(lay.total, 0.0);
  std::mt19937_64 rng(seed);
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    const double limit = std::sqrt(6.0 / (layers_[l - 1] + layers_[l]));
    double* w = params_.data() + lay.w_off[l - 1];
    const std::size_t nw =
        static_cast<std::size_t>(layers_[l]) * layers_[l - 1];
    for (std::size_t i = 0; i < nw; ++i)
      w[i] = (2.0 * uniform01(rng) - 1.0) * limit;
    // biases stay zero
  }
}

void Ansatz::forward(const std::vector<geom::Point2>& pts, MlpCache& cache,
                     std::vector<Field>& out) const {
  const std::size_t n = pts.size();
  const std::size_t nl = layers_.size();
  cache.n_points = n;
  cache.act.resize(nl - 1);  // inputs + hidden activations

  cache.act[0].resize(2 * n);
  const double sx = 2.0 / (box_[1] - box_[0]), sy = 2.0 / (box_[3] - box_[2]);
  for (std::size_t i = 0; i < n; ++i) {
    cache.act[0][2 * i] = sx * (pts[i].x - box_[0]) - 1.0;
    cache.act[0][2 * i + 1] = sy * (pts[i].y - box_[2]) - 1.0;
  }

  const Layout lay(layers_);
  MatrixXd z;
  for (std::size_t l = 1; l < nl; ++l) {
    const MapCM w(params_.data() + lay.w_off[l - 1], layers_[l],
                  layers_[l - 1]);
    const MapCM a(cache.act[l - 1].data(), layers_[l - 1], n);
    const Eigen::Map<const Eigen::VectorXd> b(params_.data() + lay.b_off[l - 1],
                                              layers_[l]);
    z.noalias() = w * a;
    z.colwise() += b;
    if (l + 1 < nl) {
      cache.act[l].resize(static_cast<std::size_t>(layers_[l]) * n);
      MapM(cache.act[l].data(), layers_[l], n) = z.array().tanh().matrix();
    } else {
      out.assign(layers_[l], Field(n));
      for (int r = 0; r < layers_[l]; ++r)
        for (std::size_t i = 0; i < n; ++i) out[r][i] = z(r, i);
    }
  }
}

void Ansatz::backward(const MlpCache& cache,
                      const std::vector<Field>& out_grads,
                      std::vector<double>& grad) const {
  const std::size_t n = cache.n_points;
  const std::size_t nl = layers_.size();
  const Layout lay(layers_);

  MatrixXd g(layers_.back(), n);
  for (int r = 0; r < layers_.back(); ++r)
    for (std::size_t i = 0; i < n; ++i) g(r, i) = out_grads[r][i];

  for (std::size_t l = nl - 1; l >= 1; --l) {
    const MapCM a(cache.act[l - 1].data(), layers_[l - 1], n);
    MapM dw(grad.data() + lay.w_off[l - 1], layers_[l], layers_[l - 1]);
    Eigen::Map<Eigen::VectorXd> db(grad.data() + lay.b_off[l - 1], layers_[l]);
    dw.noalias() += g * a.transpose();
    db += g.rowwise().sum();
    if (l == 1) break;
    const MapCM w(params_.data() + lay.w_off[l - 1], layers_[l],
                  layers_[l - 1]);
    MatrixXd gp = w.transpose() * g;
    g = (gp.array() * (1.0 - a.array().square())).matrix();
  }
}

// ---- Adam ---------------------------------------------------------------------

Adam::Adam(std::size_t n, double beta1, double beta2, double eps)
    : b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad,
                double lr) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw geom::ConfigError("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

// ---- Trainer ------------------------------------------------------------------

/// One penalized BC row: node set, compiled data, and (for Robin rows) the
/// normal-derivative taps needed for both the residual and its transpose.
struct Trainer::Penalty {
  geom::BcKind kind = geom::BcKind::free;
  std::vector<double> b;
  std::vector<std::size_t> nodes;
  std::vector<double> rhs;
  std::vector<std::array<std::size_t, 3>> taps;
  std::vector<std::array<double, 3>> coef;
  std::vector<std::vector<double>> cvals;  // [component][node]
};

Trainer::~Trainer() = default;

Trainer::Trainer(const structure::SolutionStructure& ss, const grid::Grid& g,
                 const grid::Mask& m, PdeLoss& pde, TrainConfig cfg)
    : cfg_(cfg),
      pde_(&pde),
      ss_(ss),
      se_(ss_, g, m),
      ansatz_(ss_.n_slots(), g.box, cfg.seed, cfg.hidden_layers,
              cfg.hidden_width),
      adam_(ansatz_.n_params(), cfg.beta1, cfg.beta2, cfg.eps) {
  if (cfg_.epochs < 1 || cfg_.lr0 <= 0.0 || cfg_.milestone < 1)
    throw geom::ConfigError("TrainConfig: epochs/lr0/milestone out of range");
  se_.set_parameters(cfg_.alpha, cfg_.beta);
  usage_ = se_.slot_usage();
  ctx_used_.assign(usage_.size(), 0);
  for (std::size_t c = 0; c < usage_.size(); ++c)
    for (const auto u : usage_[c]) ctx_used_[c] |= u;

  slots_ = se_.zero_slots();
  caches_.resize(usage_.size());

  const auto& dom = ss_.domain;
  for (const auto& pr : ss_.penalty_rows) {
    const auto& sp = dom.segments[pr.seg];
    // Circles carry no on-grid surface nodes; their penalty rows contribute
    // nothing to the boundary loss (weak-mode limitation, documented).
    if (!sp.is_line()) continue;
    const auto& row = sp.rows[pr.row];
    Penalty p;
    p.kind = row.kind;
    p.b = row.b;
    if (row.kind == geom::BcKind::dirichlet) {
      const auto prog = expr::compile(row.g);
      for (std::size_t k = 0; k < g.size(); ++k) {
        const auto& c = m.cls[k];
        if (c.cls != geom::NodeClass::on_segment || c.segment != pr.seg)
          continue;
        const auto pt = g.point(static_cast<int>(k) % g.nx,
                                static_cast<int>(k) / g.nx);
        p.nodes.push_back(k);
        p.rhs.push_back(prog.eval(pt.x, pt.y, cfg_.alpha, cfg_.beta));
      }
    } else if (row.kind == geom::BcKind::robin) {
      const auto op = grid::normal_derivative_op(g, m, dom, pr.seg);
      p.nodes = op.nodes;
      p.taps = op.taps;
      p.coef = op.coef;
      const auto hprog = expr::compile(row.h);
      std::vector<expr::Program> cprog;
      cprog.reserve(row.c.size());
      for (const auto& ce : row.c) cprog.push_back(expr::compile(ce));
      p.cvals.assign(row.c.size(), {});
      for (const std::size_t k : p.nodes) {
        const auto pt = g.point(static_cast<int>(k) % g.nx,
                                static_cast<int>(k) / g.nx);
        p.rhs.push_back(hprog.eval(pt.x, pt.y, cfg_.alpha, cfg_.beta));
        for (std::size_t c = 0; c < cprog.size(); ++c)
          p.cvals[c].push_back(cprog[c].eval(pt.x, pt.y, cfg_.alpha, cfg_.beta));
      }
    } else {
      continue;  // free rows are never penalized
    }
    n_penalty_samples_ += p.nodes.size();
    penalties_.push_back(std::move(p));
  }
}

LossParts Trainer::evaluate(std::vector<double>* grad) {
  const auto& ctx = se_.contexts();
  for (std::size_t c = 0; c < ctx.points.size(); ++c)
    if (ctx_used_[c]) ansatz_.forward(ctx.points[c], caches_[c], slots_[c]);
  fields_ = se_.forward(slots_, /*retain=*/true);

  const int ncomp = se_.structure().n_components();
  seeds_.assign(ncomp, Field(fields_[0].size(), 0.0));

  LossParts lp;
  lp.pde = cfg_.pde_weight * pde_->eval(fields_, seeds_);
  if (cfg_.pde_weight != 1.0)
    for (auto& s : seeds_)
      for (auto& v : s) v *= cfg_.pde_weight;

  if (n_penalty_samples_ > 0) {
    const double wn = cfg_.bc_weight * 2.0 / n_penalty_samples_;
    double sq = 0.0;
    for (const auto& p : penalties_) {
      for (std::size_t i = 0; i < p.nodes.size(); ++i) {
        const std::size_t k = p.nodes[i];
        double res = -p.rhs[i];
        if (p.kind == geom::BcKind::dirichlet) {
          for (int c = 0; c < ncomp; ++c) res += p.b[c] * fields_[c][k];
        } else {
          for (int c = 0; c < ncomp; ++c) {
            if (p.b[c] != 0.0)
              res += p.b[c] * (p.coef[i][0] * fields_[c][p.taps[i][0]] +
                               p.coef[i][1] * fields_[c][p.taps[i][1]] +
                               p.coef[i][2] * fields_[c][p.taps[i][2]]);
            res += p.cvals[c][i] * fields_[c][k];
          }
        }
        sq += res * res;
        const double s = wn * res;
        if (p.kind == geom::BcKind::dirichlet) {
          for (int c = 0; c < ncomp; ++c) seeds_[c][k] += s * p.b[c];
        } else {
          for (int c = 0; c < ncomp; ++c) {
            if (p.b[c] != 0.0)
              for (int t = 0; t < 3; ++t)
                seeds_[c][p.taps[i][t]] += s * p.b[c] * p.coef[i][t];
            seeds_[c][k] += s * p.cvals[c][i];
          }
        }
      }
    }
    lp.bc = cfg_.bc_weight * sq / static_cast<double>(n_penalty_samples_);
  }

  lp.total = lp.pde + lp.bc;
  if (!std::isfinite(lp.total))
    throw std::runtime_error(
        "train: non-finite loss (pde=" + std::to_string(lp.pde) +
        ", bc=" + std::to_string(lp.bc) + ")");

  if (grad) {
    grad->assign(ansatz_.n_params(), 0.0);
    const grid::SlotValues sv = se_.backward(seeds_);
    for (std::size_t c = 0; c < sv.size(); ++c)
      if (ctx_used_[c]) ansatz_.backward(caches_[c], sv[c], *grad);
  }
  return lp;
}

TrainResult Trainer::run(const ErrorFn& err) {
  LossReport report;
  report.rows.reserve(cfg_.epochs);
  std::vector<double> grad;
  for (int e = 0; e < cfg_.epochs; ++e) {
    const double lr = cfg_.lr0 * std::pow(0.5, e / cfg_.milestone);
    const LossParts lp = evaluate(&grad);
    EpochRow row;
    row.epoch = e;
    row.loss_total = lp.total;
    row.loss_pde = lp.pde;
    row.loss_bc = lp.bc;
    if (err) row.err_l2 = err(fields_);
    report.rows.push_back(std::move(row));
    if (lp.total > cfg_.divergence_abort) {
      report.diverged = true;
      break;
    }
    adam_.step(ansatz_.params(), grad, lr);
  }
  const LossParts fin = evaluate(nullptr);
  return {ansatz_, std::move(report), fields_, fin};
}

TrainResult train(const structure::SolutionStructure& ss, const grid::Grid& g,
                  const grid::Mask& m, PdeLoss& pde, const TrainConfig& cfg,
                  const ErrorFn& err) {
  Trainer t(ss, g, m, pde, cfg);
  return t.run(err);
}

// ---- reports and checkpoints ---------------------------------------------------

void write_losses_csv(const std::string& path, const LossReport& report,
                      const std::vector<std::string>& components) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "epoch,loss_total,loss_pde,loss_bc";
  for (const auto& c : components) f << ",err_" << c;
  f << "\n";
  f.precision(17);
  for (const auto& r : report.rows) {
    f << r.epoch << ',' << r.loss_total << ',' << r.loss_pde << ','
      << r.loss_bc;
    for (std::size_t c = 0; c < components.size(); ++c) {
      f << ',';
      if (c < r.err_l2.size()) f << r.err_l2[c];
    }
    f << "\n";
  }
}

void save_checkpoint(const std::string& path, const Ansatz& a,
                     std::uint64_t structure_hash) {
  nlohmann::json h;
  h["layers"] = a.layers();
  h["seed"] = a.seed();
  h["structure_hash"] = structure_hash;
  h["n_params"] = a.n_params();
  const std::string header = h.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.write("HBC1", 4);
  const auto len = static_cast<std::uint32_t>(header.size());
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(a.params().data()),
          static_cast<std::streamsize>(a.n_params() * sizeof(double)));
}

Ansatz load_checkpoint(const std::string& path,
                       const std::array<double, 4>& box,
                       std::uint64_t expect_structure_hash) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw geom::ConfigError("checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "HBC1", 4) != 0)
    throw geom::ConfigError("checkpoint: bad magic in " + path);
  std::uint32_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header(len, '\0');
  f.read(header.data(), len);
  if (!f) throw geom::ConfigError("checkpoint: truncated header in " + path);

  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw geom::ConfigError("checkpoint: malformed header: " +
                            std::string(e.what()));
  }
  const auto layers = h.at("layers").get<std::vector<int>>();
  const auto seed = h.at("seed").get<std::uint64_t>();
  const auto hash = h.at("structure_hash").get<std::uint64_t>();
  const auto n_params = h.at("n_params").get<std::size_t>();
  if (expect_structure_hash != 0 && hash != expect_structure_hash)
    throw geom::ConfigError("checkpoint: structure hash mismatch");
  if (layers.size() < 3 || layers.front() != 2)
    throw geom::ConfigError("checkpoint: unsupported layer shape");

  Ansatz a(layers.back(), box, seed, static_cast<int>(layers.size()) - 2,
           layers[1]);
  if (a.layers() != layers || a.n_params() != n_params)
    throw geom::ConfigError("checkpoint: layer table mismatch");
  f.read(reinterpret_cast<char*>(a.params().data()),
         static_cast<std::streamsize>(n_params * sizeof(double)));
  if (!f) throw geom::ConfigError("checkpoint: truncated parameters in " + path);
  return a;
}

}  // namespace hardbc::train
