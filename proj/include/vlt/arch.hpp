#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "vlt/errors.hpp"
#include "vlt/random.hpp"

namespace vlt {

/// Candidate block per searchable slot. The integer value is the code digit.
enum class BlockKind : std::uint8_t { Shuffle3 = 0, Shuffle5 = 1, Shuffle7 = 2, Xception3 = 3 };

inline constexpr int kChoices = 4;

inline std::size_t kernel_size(BlockKind k) {
  switch (k) {
    case BlockKind::Shuffle3: return 3;
    case BlockKind::Shuffle5: return 5;
    case BlockKind::Shuffle7: return 7;
    case BlockKind::Xception3: return 3;
  }
  return 3;
}

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::Shuffle3: return "Shuffle3";
    case BlockKind::Shuffle5: return "Shuffle5";
    case BlockKind::Shuffle7: return "Shuffle7";
    case BlockKind::Xception3: return "Xception3";
  }
  return "?";
}

struct BlockChoice {
  BlockKind kind = BlockKind::Shuffle3;
  std::size_t stride = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
};

/// Stage layout of one backbone branch. Stride 2 only ever sits on the first
/// block of a stage; every stage is followed by a ModaMixer with two slots.
struct StageLayout {
  std::vector<std::size_t> counts;
  std::vector<std::size_t> channels;
  std::vector<std::size_t> strides;
  std::size_t stem_channels = 16;
  std::size_t stem_stride = 2;
  std::size_t out_channels = 64;

  std::size_t stages() const { return counts.size(); }

  std::size_t backbone_slots() const {
    std::size_t n = 0;
    for (std::size_t c : counts) n += c;
    return n;
  }
  std::size_t mixer_slots() const { return 2 * stages(); }

  std::size_t total_stride() const {
    std::size_t s = stem_stride;
    for (std::size_t p : strides) s *= p;
    return s;
  }

  void validate() const {
    if (counts.empty()) throw ConfigError("stage layout needs at least one stage");
    if (channels.size() != counts.size() || strides.size() != counts.size()) {
      throw ConfigError("stage layout: counts, channels and strides must have equal length");
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) throw ConfigError("stage " + std::to_string(i + 1) + " has no blocks");
      if (channels[i] == 0 || channels[i] % 2 != 0) {
        throw ConfigError("stage " + std::to_string(i + 1) + " channel count must be even and positive");
      }
      if (strides[i] != 1 && strides[i] != 2) throw ConfigError("stage strides must be 1 or 2");
    }
    if (stem_channels == 0 || out_channels == 0) throw ConfigError("stem/output channels must be positive");
  }

  /// Stride/channel bookkeeping for block `b` of stage `s`.
  BlockChoice block(std::size_t s, std::size_t b, BlockKind kind) const {
    const std::size_t in = b == 0 ? (s == 0 ? stem_channels : channels[s - 1]) : channels[s];
    return BlockChoice{kind, b == 0 ? strides[s] : 1, in, channels[s]};
  }

  // Table-of-configuration layout: 16 backbone slots, stride 8.
  static StageLayout paper() { return {{3, 3, 7, 3}, {64, 160, 320, 640}, {2, 2, 1, 1}, 16, 2, 256}; }
  static StageLayout desk() { return {{2, 2, 2, 2}, {16, 32, 64, 128}, {2, 2, 1, 1}, 16, 2, 64}; }
  // Reduced width for end-to-end experiments on one CPU core.
  static StageLayout compact() { return {{1, 1, 1, 1}, {16, 16, 32, 32}, {2, 2, 1, 1}, 8, 2, 32}; }
  static StageLayout single_stage() { return {{1}, {16}, {2}, 8, 2, 16}; }

  static StageLayout preset(std::string_view name) {
    if (name == "paper") return paper();
    if (name == "desk") return desk();
    if (name == "compact") return compact();
    if (name == "single") return single_stage();
    throw ConfigError("unknown layout preset '" + std::string(name) + "'");
  }
};

/// Searchable slots per branch: backbone blocks plus two per ModaMixer.
inline std::size_t slots_per_branch(const StageLayout& layout) { return layout.backbone_slots() + layout.mixer_slots(); }

struct BranchCode {
  std::vector<std::vector<int>> stages;  // one digit per backbone block
  std::vector<std::array<int, 2>> mixers;  // {selected-path block, vision-path block}

  friend bool operator==(const BranchCode&, const BranchCode&) = default;
};

/// Choice vector over both branches. Flat order per branch: backbone slots
/// stage by stage, then mixer slots (m1.sel, m1.vis, m2.sel, ...); the
/// template branch precedes the search branch.
struct ArchCode {
  BranchCode tmpl;
  BranchCode search;

  friend bool operator==(const ArchCode&, const ArchCode&) = default;

  static std::vector<int> flatten_branch(const BranchCode& b) {
    std::vector<int> out;
    for (const auto& st : b.stages) out.insert(out.end(), st.begin(), st.end());
    for (const auto& m : b.mixers) out.insert(out.end(), m.begin(), m.end());
    return out;
  }

  std::vector<int> flat() const {
    std::vector<int> out = flatten_branch(tmpl);
    const std::vector<int> s = flatten_branch(search);
    out.insert(out.end(), s.begin(), s.end());
    return out;
  }

  static BranchCode branch_from_flat(const StageLayout& layout, const int* digits) {
    BranchCode b;
    std::size_t k = 0;
    for (std::size_t s = 0; s < layout.stages(); ++s) {
      b.stages.emplace_back(digits + k, digits + k + layout.counts[s]);
      k += layout.counts[s];
    }
    for (std::size_t s = 0; s < layout.stages(); ++s) {
      b.mixers.push_back({digits[k], digits[k + 1]});
      k += 2;
    }
    return b;
  }

  static ArchCode from_flat(const StageLayout& layout, const std::vector<int>& flat) {
    const std::size_t per = slots_per_branch(layout);
    if (flat.size() != 2 * per) {
      throw ArgumentError("arch code has " + std::to_string(flat.size()) + " digits, layout needs " +
                          std::to_string(2 * per));
    }
    for (int d : flat)
      if (d < 0 || d >= kChoices) throw ArgumentError("arch code digit " + std::to_string(d) + " outside 0..3");
    return {branch_from_flat(layout, flat.data()), branch_from_flat(layout, flat.data() + per)};
  }

  static ArchCode uniform(const StageLayout& layout, int digit) {
    return from_flat(layout, std::vector<int>(2 * slots_per_branch(layout), digit));
  }

  /// Throws unless the code's group structure matches `layout`.
  void check(const StageLayout& layout) const {
    for (const BranchCode* b : {&tmpl, &search}) {
      if (b->stages.size() != layout.stages() || b->mixers.size() != layout.stages()) {
        throw ArgumentError("arch code has " + std::to_string(b->stages.size()) + " stage groups, layout has " +
                            std::to_string(layout.stages()));
      }
      for (std::size_t s = 0; s < layout.stages(); ++s) {
        if (b->stages[s].size() != layout.counts[s]) {
          throw ArgumentError("arch code stage " + std::to_string(s + 1) + " has " + std::to_string(b->stages[s].size()) +
                              " digits, layout needs " + std::to_string(layout.counts[s]));
        }
        for (int d : b->stages[s])
          if (d < 0 || d >= kChoices) throw ArgumentError("arch code digit outside 0..3");
        for (int d : b->mixers[s])
          if (d < 0 || d >= kChoices) throw ArgumentError("arch code digit outside 0..3");
      }
    }
  }

  bool symmetric() const { return tmpl == search; }
};

namespace detail {

inline std::string join_digits(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += static_cast<char>('0' + v[i]);
  }
  return out;
}

inline std::string branch_text(const BranchCode& b) {
  std::string out;
  for (std::size_t s = 0; s < b.stages.size(); ++s) out += (s ? "|" : "") + join_digits(b.stages[s]);
  out += "/M:";
  for (std::size_t s = 0; s < b.mixers.size(); ++s)
    out += (s ? "|" : "") + join_digits({b.mixers[s][0], b.mixers[s][1]});
  return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i)
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  return out;
}

inline std::vector<int> parse_group(const std::string& group) {
  std::vector<int> out;
  for (const std::string& d : split(group, ',')) {
    if (d.size() != 1 || d[0] < '0' || d[0] > '3') throw ParseError("arch code: malformed group '" + group + "'");
    out.push_back(d[0] - '0');
  }
  return out;
}

inline BranchCode parse_branch(std::string_view text, char tag) {
  const std::string prefix = std::string(1, tag) + ":";
  if (text.substr(0, 2) != prefix) throw ParseError("arch code: branch must start with '" + prefix + "', got '" + std::string(text) + "'");
  const std::size_t m = text.find("/M:");
  if (m == std::string_view::npos) throw ParseError("arch code: branch '" + std::string(text) + "' lacks '/M:' mixer section");
  BranchCode b;
  for (const std::string& g : split(text.substr(2, m - 2), '|')) b.stages.push_back(parse_group(g));
  for (const std::string& g : split(text.substr(m + 3), '|')) {
    const std::vector<int> pair = parse_group(g);
    if (pair.size() != 2) throw ParseError("arch code: mixer group '" + g + "' must have exactly 2 digits");
    b.mixers.push_back({pair[0], pair[1]});
  }
  if (b.stages.size() != b.mixers.size()) throw ParseError("arch code: stage and mixer group counts differ");
  return b;
}

}  // namespace detail

/// `T:<s1>|...|<sn>/M:<m1>|...;S:<...>/M:<...>`, digits comma-separated.
inline std::string to_text(const ArchCode& code) {
  return "T:" + detail::branch_text(code.tmpl) + ";S:" + detail::branch_text(code.search);
}

inline ArchCode parse_arch_code(std::string_view text) {
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r' || text.back() == ' ')) text.remove_suffix(1);
  const std::size_t semi = text.find(';');
  if (semi == std::string_view::npos) throw ParseError("arch code: missing ';' between branches");
  return {detail::parse_branch(text.substr(0, semi), 'T'), detail::parse_branch(text.substr(semi + 1), 'S')};
}

/// i.i.d. uniform choice per slot, independently for both branches.
inline ArchCode sample_path(const StageLayout& layout, Rng& rng) {
  std::vector<int> flat(2 * slots_per_branch(layout));
  for (int& d : flat) d = static_cast<int>(rng.below(kChoices));
  return ArchCode::from_flat(layout, flat);
}

}  // namespace vlt
