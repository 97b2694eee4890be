#include "pdrec/encoders.hpp"

#include <cmath>
#include <numeric>

#include "pdrec/error.hpp"

namespace pdrec {

std::string to_string(Architecture arch) {
  return arch == Architecture::kRecurrent ? "recurrent" : "self-attentive";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "recurrent" || name == "gru") return Architecture::kRecurrent;
  if (name == "self-attentive" || name == "attention" || name == "sasrec") return Architecture::kSelfAttentive;
  throw Error("unknown encoder architecture '" + name + "'");
}

namespace {

std::string block_name(int b, const char* leaf) { return "b" + std::to_string(b) + "." + leaf; }

}  // namespace

Encoder::Encoder(EncoderConfig config, std::uint64_t init_seed) : config_(config) {
  if (config_.n_items == 0 || config_.dim < 1 || config_.max_len < 1) throw Error("encoder: bad dimensions");
  if (config_.dropout < 0.0 || config_.dropout >= 1.0) throw Error("encoder: dropout must be in [0, 1)");
  const Eigen::Index d = config_.dim;
  const double emb_bound = 1.0 / std::sqrt(static_cast<double>(d));
  const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(derive_seed(init_seed, {stream_tag("encoder-init")}));

  params_.add("item_emb", uniform_matrix(static_cast<Eigen::Index>(config_.n_items), d, emb_bound, rng));
  if (config_.arch == Architecture::kRecurrent) {
    for (const char* g : {"z", "r", "h"}) {
      params_.add(std::string("gru.w") + g, gaussian_matrix(d, d, w_std, rng));
      params_.add(std::string("gru.u") + g, gaussian_matrix(d, d, w_std, rng));
      params_.add(std::string("gru.b") + g, ad::Matrix::Zero(1, d));
    }
    params_.round_to_f32();
    return;
  }

  if (config_.heads < 1 || config_.dim % config_.heads != 0) throw Error("encoder: dim must be divisible by heads");
  if (config_.blocks < 1) throw Error("encoder: need at least one block");
  params_.add("pos_emb", uniform_matrix(config_.max_len, d, emb_bound, rng));
  for (int b = 0; b < config_.blocks; ++b) {
    params_.add(block_name(b, "ln1_g"), ad::Matrix::Ones(1, d));
    params_.add(block_name(b, "ln1_b"), ad::Matrix::Zero(1, d));
    params_.add(block_name(b, "wq"), gaussian_matrix(d, d, w_std, rng));
    params_.add(block_name(b, "wk"), gaussian_matrix(d, d, w_std, rng));
    params_.add(block_name(b, "wv"), gaussian_matrix(d, d, w_std, rng));
    params_.add(block_name(b, "ln2_g"), ad::Matrix::Ones(1, d));
    params_.add(block_name(b, "ln2_b"), ad::Matrix::Zero(1, d));
    params_.add(block_name(b, "ff1_w"), gaussian_matrix(d, d, w_std, rng));
    params_.add(block_name(b, "ff1_b"), ad::Matrix::Zero(1, d));
    params_.add(block_name(b, "ff2_w"), gaussian_matrix(d, d, w_std, rng));
    params_.add(block_name(b, "ff2_b"), ad::Matrix::Zero(1, d));
  }
  params_.add("lnf_g", ad::Matrix::Ones(1, d));
  params_.add("lnf_b", ad::Matrix::Zero(1, d));
  params_.round_to_f32();
}

ad::Var Encoder::dropout(ad::Tape& tape, ad::Var x, Rng* rng) const {
  if (rng == nullptr || config_.dropout == 0.0) return x;
  const double keep = 1.0 - config_.dropout;
  ad::Matrix mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask(i) = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
  return ad::hadamard(x, tape.constant(std::move(mask)));
}

ad::Var Encoder::forward(ad::Tape& tape, std::span<const ItemId> seq, Rng* dropout_rng) {
  if (seq.empty()) throw Error("encoder: empty sequence");
  const std::size_t max_len = static_cast<std::size_t>(config_.max_len);
  if (seq.size() > max_len) seq = seq.subspan(seq.size() - max_len);
  std::vector<int> ids;
  for (ItemId i : seq) {
    if (i >= config_.n_items) throw Error("encoder: item " + std::to_string(i) + " outside the corpus");
    ids.push_back(static_cast<int>(i));
  }
  ad::Var x = ad::gather_rows(tape.param(item_embedding_param()), ids);
  if (config_.arch == Architecture::kRecurrent) return forward_recurrent(tape, dropout(tape, x, dropout_rng), dropout_rng);
  return forward_attentive(tape, x, dropout_rng);
}

ad::Var Encoder::forward_recurrent(ad::Tape& tape, ad::Var x, Rng* /*rng*/) {
  auto p = [&](const std::string& name) { return tape.param(params_.at(name)); };
  ad::Var xz = ad::add_row(ad::matmul(x, p("gru.wz")), p("gru.bz"));
  ad::Var xr = ad::add_row(ad::matmul(x, p("gru.wr")), p("gru.br"));
  ad::Var xh = ad::add_row(ad::matmul(x, p("gru.wh")), p("gru.bh"));
  ad::Var uz = p("gru.uz"), ur = p("gru.ur"), uh = p("gru.uh");

  ad::Var h = tape.constant(ad::Matrix::Zero(1, config_.dim));
  std::vector<ad::Var> states;
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    ad::Var z = ad::sigmoid(ad::add(ad::slice_rows(xz, j, 1), ad::matmul(h, uz)));
    ad::Var r = ad::sigmoid(ad::add(ad::slice_rows(xr, j, 1), ad::matmul(h, ur)));
    ad::Var cand = ad::tanh(ad::add(ad::slice_rows(xh, j, 1), ad::matmul(ad::hadamard(r, h), uh)));
    h = ad::add(ad::hadamard(ad::one_minus(z), h), ad::hadamard(z, cand));
    states.push_back(h);
  }
  return ad::concat_rows(states);
}

ad::Var Encoder::forward_attentive(ad::Tape& tape, ad::Var x, Rng* rng) {
  auto p = [&](const std::string& name) { return tape.param(params_.at(name)); };
  const Eigen::Index n = x.rows();
  const int d = config_.dim, dh = config_.dim / config_.heads;
  std::vector<int> positions(static_cast<std::size_t>(n));
  std::iota(positions.begin(), positions.end(), 0);

  ad::Var h = ad::add(ad::scale(x, std::sqrt(static_cast<double>(d))), ad::gather_rows(p("pos_emb"), positions));
  h = dropout(tape, h, rng);
  for (int b = 0; b < config_.blocks; ++b) {
    auto bp = [&](const char* leaf) { return p(block_name(b, leaf)); };
    ad::Var q_in = ad::layer_norm(h, bp("ln1_g"), bp("ln1_b"));
    ad::Var q = ad::matmul(q_in, bp("wq"));
    ad::Var k = ad::matmul(h, bp("wk"));
    ad::Var v = ad::matmul(h, bp("wv"));
    std::vector<ad::Var> heads;
    for (int hd = 0; hd < config_.heads; ++hd) {
      ad::Var qh = config_.heads == 1 ? q : ad::slice_cols(q, hd * dh, dh);
      ad::Var kh = config_.heads == 1 ? k : ad::slice_cols(k, hd * dh, dh);
      ad::Var vh = config_.heads == 1 ? v : ad::slice_cols(v, hd * dh, dh);
      ad::Var att = ad::causal_softmax(ad::scale(ad::matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh))));
      heads.push_back(ad::matmul(att, vh));
    }
    ad::Var att = config_.heads == 1 ? heads.front() : ad::concat_cols(heads);
    h = ad::add(q_in, dropout(tape, att, rng));
    ad::Var y = ad::layer_norm(h, bp("ln2_g"), bp("ln2_b"));
    ad::Var ff = dropout(tape, ad::relu(ad::add_row(ad::matmul(y, bp("ff1_w")), bp("ff1_b"))), rng);
    ff = dropout(tape, ad::add_row(ad::matmul(ff, bp("ff2_w")), bp("ff2_b")), rng);
    h = ad::add(y, ff);
  }
  return ad::layer_norm(h, p("lnf_g"), p("lnf_b"));
}

Eigen::MatrixXd Encoder::encode_positions(std::span<const ItemId> seq) const {
  ad::Tape tape(false);
  // Inference tapes never write to params.
  return const_cast<Encoder&>(*this).forward(tape, seq, nullptr).value();
}

Eigen::VectorXd Encoder::encode(std::span<const ItemId> seq) const {
  const Eigen::MatrixXd states = encode_positions(seq);
  return states.row(states.rows() - 1).transpose();
}

std::vector<double> Encoder::score_items(std::span<const ItemId> seq, std::span<const ItemId> items) const {
  const Eigen::VectorXd h = encode(seq);
  std::vector<double> out;
  out.reserve(items.size());
  for (ItemId i : items) out.push_back(score(h, i, item_embeddings()));
  return out;
}

void Encoder::zero_non_embedding() {
  for (auto& p : params_.all()) {
    if (p.name == "item_emb" || p.name == "pos_emb") continue;
    const bool gain = p.name.size() >= 2 && p.name.compare(p.name.size() - 2, 2, "_g") == 0;
    if (gain)
      p.value.setOnes();
    else
      p.value.setZero();
  }
}

Checkpoint Encoder::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.header = {{"kind", "encoder"},           {"arch", to_string(config_.arch)},
                 {"n_items", config_.n_items},  {"dim", config_.dim},
                 {"max_len", config_.max_len},  {"heads", config_.heads},
                 {"blocks", config_.blocks},    {"dropout", config_.dropout}};
  ckpt.tensors = params_.to_tensors();
  return ckpt;
}

Encoder Encoder::from_checkpoint(const Checkpoint& ckpt) {
  const auto& h = ckpt.header;
  if (h.value("kind", "") != "encoder") throw Error("checkpoint is not an encoder");
  EncoderConfig cfg;
  cfg.arch = parse_architecture(h.at("arch").get<std::string>());
  cfg.n_items = h.at("n_items").get<std::size_t>();
  cfg.dim = h.at("dim").get<int>();
  cfg.max_len = h.at("max_len").get<int>();
  cfg.heads = h.at("heads").get<int>();
  cfg.blocks = h.at("blocks").get<int>();
  cfg.dropout = h.at("dropout").get<double>();
  Encoder enc(cfg, 0);
  enc.params_.load_tensors(ckpt);
  return enc;
}

double score(const Eigen::VectorXd& state, ItemId item, const Eigen::MatrixXd& item_embeddings) {
  if (static_cast<Eigen::Index>(item) >= item_embeddings.rows()) throw Error("score: item outside the corpus");
  return item_embeddings.row(item).dot(state);
}

}  // namespace pdrec
