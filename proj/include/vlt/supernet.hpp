#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vlt/arch.hpp"
#include "vlt/blocks.hpp"
#include "vlt/modamixer.hpp"
#include "vlt/ops.hpp"
#include "vlt/params.hpp"

namespace vlt {

inline constexpr std::size_t kImageChannels = 3;

namespace keys {

inline std::string branch(bool tmpl) { return tmpl ? "T" : "S"; }
inline std::string stage(bool tmpl, std::size_t s) { return branch(tmpl) + "/stage" + std::to_string(s + 1); }
inline std::string backbone_candidate(bool tmpl, std::size_t s, std::size_t b, int digit) {
  return stage(tmpl, s) + "/b" + std::to_string(b) + "/c" + std::to_string(digit);
}
inline modamixer::ModaMixerParams mixer(const StageLayout& layout, std::size_t lang_dim, bool tmpl, std::size_t s) {
  return {branch(tmpl) + "/mixer" + std::to_string(s + 1), layout.channels[s], lang_dim};
}

}  // namespace keys

struct ForwardOptions {
  bool residual = true;
};

struct BranchTrace {
  Var out;
  std::vector<Var> stage_outputs;  // backbone stage output, i.e. each mixer's f_v
  std::vector<modamixer::MixResult> mixers;
};

struct TwoStreamTrace {
  BranchTrace tmpl;
  BranchTrace search;
};

/// stem -> (stage_i -> ModaMixer_i)* -> output conv for one branch, running only
/// the candidates named by `code`. The same language vector feeds every mixer.
inline BranchTrace branch_forward(ParamBinder& p, const StageLayout& layout, std::size_t lang_dim, bool tmpl,
                                  const BranchCode& code, Var image, Var f_l, const ForwardOptions& opt) {
  const std::string br = keys::branch(tmpl);
  if (image.value().rank() != 3 || image.value().dim(2) != kImageChannels) {
    throw DimensionError("forward: image must be H x W x 3, got " + shape_str(image.shape()));
  }
  BranchTrace trace;
  Var x = ops::conv2d(image, p(br + "/stem.w"), layout.stem_stride);
  x = ops::relu(ops::affine_norm(x, p(br + "/stem.g"), p(br + "/stem.b")));
  for (std::size_t s = 0; s < layout.stages(); ++s) {
    for (std::size_t b = 0; b < layout.counts[s]; ++b) {
      const int digit = code.stages[s][b];
      x = blocks::block_forward(p, keys::backbone_candidate(tmpl, s, b, digit), layout.block(s, b, static_cast<BlockKind>(digit)), x);
    }
    trace.stage_outputs.push_back(x);
    modamixer::MixResult m = modamixer::mix_from_store(p, keys::mixer(layout, lang_dim, tmpl, s), code.mixers[s], f_l, x, opt.residual);
    x = m.out;
    trace.mixers.push_back(m);
  }
  x = ops::affine_norm(ops::pointwise_conv(x, p(br + "/out.w")), p(br + "/out.g"), p(br + "/out.b"));
  trace.out = x;
  return trace;
}

inline TwoStreamTrace two_stream_forward(ParamBinder& p, const StageLayout& layout, std::size_t lang_dim,
                                         const ArchCode& code, Var tmpl_image, Var search_image, Var f_l,
                                         const ForwardOptions& opt = {}) {
  code.check(layout);
  if (f_l.value().numel() != lang_dim) {
    throw DimensionError("forward: language vector has " + std::to_string(f_l.value().numel()) + " entries, network expects " +
                         std::to_string(lang_dim));
  }
  return {branch_forward(p, layout, lang_dim, true, code.tmpl, tmpl_image, f_l, opt),
          branch_forward(p, layout, lang_dim, false, code.search, search_image, f_l, opt)};
}

/// Key prefixes always used regardless of the sampled path.
inline std::vector<std::string> always_active_prefixes(const StageLayout& layout) {
  std::vector<std::string> out{"head/"};
  for (bool tmpl : {true, false}) {
    const std::string br = keys::branch(tmpl);
    out.push_back(br + "/stem.");
    out.push_back(br + "/out.");
    for (std::size_t s = 0; s < layout.stages(); ++s) out.push_back(br + "/mixer" + std::to_string(s + 1) + "/lin.");
  }
  return out;
}

/// Key prefixes of the candidates selected by `code`.
inline std::vector<std::string> path_prefixes(const StageLayout& layout, const ArchCode& code) {
  std::vector<std::string> out;
  for (bool tmpl : {true, false}) {
    const BranchCode& bc = tmpl ? code.tmpl : code.search;
    for (std::size_t s = 0; s < layout.stages(); ++s) {
      for (std::size_t b = 0; b < layout.counts[s]; ++b)
        out.push_back(keys::backbone_candidate(tmpl, s, b, bc.stages[s][b]) + "/");
      const auto mp = keys::mixer(layout, 0, tmpl, s);
      out.push_back(mp.candidate_prefix(0, bc.mixers[s][0]) + "/");
      out.push_back(mp.candidate_prefix(1, bc.mixers[s][1]) + "/");
    }
  }
  return out;
}

inline bool has_any_prefix(const std::string& key, const std::vector<std::string>& prefixes) {
  for (const auto& pre : prefixes)
    if (key.compare(0, pre.size(), pre) == 0) return true;
  return false;
}

/// Standalone network for one fixed code.
struct Subnet {
  StageLayout layout;
  std::size_t lang_dim = 0;
  ArchCode code;
  ParamStore params;

  TwoStreamTrace forward(ParamBinder& p, Var tmpl_image, Var search_image, Var f_l, const ForwardOptions& opt = {}) const {
    return two_stream_forward(p, layout, lang_dim, code, tmpl_image, search_image, f_l, opt);
  }
};

/// Weight-sharing store: every candidate of every slot in both branches, all
/// ModaMixer projections and candidates, stems and output convolutions.
struct Supernet {
  StageLayout layout;
  std::size_t lang_dim = 0;
  ParamStore params;

  static Supernet build(const StageLayout& layout, std::size_t lang_dim, std::uint64_t seed) {
    layout.validate();
    Supernet net{layout, lang_dim, {}};
    Rng root(seed);
    for (bool tmpl : {true, false}) {
      const std::string br = keys::branch(tmpl);
      Rng rng = root.child(br);
      net.params.add(br + "/stem.w", init_uniform(Shape{3, 3, kImageChannels, layout.stem_channels}, 9 * kImageChannels, rng));
      net.params.add(br + "/stem.g", Tensor(Shape{1, layout.stem_channels}, 1.0));
      net.params.add(br + "/stem.b", Tensor(Shape{1, layout.stem_channels}, 0.0));
      for (std::size_t s = 0; s < layout.stages(); ++s) {
        for (std::size_t b = 0; b < layout.counts[s]; ++b)
          for (int k = 0; k < kChoices; ++k)
            blocks::init_block(net.params, keys::backbone_candidate(tmpl, s, b, k), layout.block(s, b, static_cast<BlockKind>(k)), rng);
        modamixer::init_modamixer(net.params, keys::mixer(layout, lang_dim, tmpl, s), rng);
      }
      const std::size_t last = layout.channels.back();
      net.params.add(br + "/out.w", init_uniform(Shape{last, layout.out_channels}, last, rng, 0.5));
      net.params.add(br + "/out.g", Tensor(Shape{1, layout.out_channels}, 1.0));
      net.params.add(br + "/out.b", Tensor(Shape{1, layout.out_channels}, 0.0));
    }
    return net;
  }

  TwoStreamTrace forward(ParamBinder& p, const ArchCode& code, Var tmpl_image, Var search_image, Var f_l,
                         const ForwardOptions& opt = {}) const {
    return two_stream_forward(p, layout, lang_dim, code, tmpl_image, search_image, f_l, opt);
  }

  /// Copies only the parameters the code selects (plus always-active ones).
  Subnet extract(const ArchCode& code) const {
    code.check(layout);
    std::vector<std::string> keep = always_active_prefixes(layout);
    const std::vector<std::string> path = path_prefixes(layout, code);
    keep.insert(keep.end(), path.begin(), path.end());
    return Subnet{layout, lang_dim, code, params.filtered([&](const std::string& k) { return has_any_prefix(k, keep); })};
  }
};

inline Subnet extract_subnet(const Supernet& net, const ArchCode& code) { return net.extract(code); }

/// Inference-only forward returning the two branch outputs.
template <typename Net, typename... Code>
std::pair<Tensor, Tensor> forward_values(const Net& net, const Tensor& tmpl_image, const Tensor& search_image,
                                         const Tensor& f_l, const ForwardOptions& opt, const Code&... code) {
  Tape tape;
  ParamBinder p(tape, net.params, false);
  const TwoStreamTrace tr =
      net.forward(p, code..., tape.constant(tmpl_image), tape.constant(search_image), tape.constant(f_l), opt);
  return {tr.tmpl.out.value(), tr.search.out.value()};
}

}  // namespace vlt
