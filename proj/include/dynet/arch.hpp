#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dynet/autograd.hpp"
#include "dynet/dynconv.hpp"

namespace dynet {

enum class BlockKind {
  DyMobile,
  DyShuffle,
  DyResNetBasic,
  DyResNetBottleneck,
  FixMobile,
  FixShuffle,
  FixResNetBasic,
  FixResNetBottleneck,
  MobileV2,          ///< original inverted residual, expansion 6
  ShuffleV2,         ///< original ShuffleNetV2 unit, 1:1 split
  ResNetBasic,       ///< original full-width basic block
  ResNetBottleneck,  ///< original full-width bottleneck, expansion 4
};

const char* block_kind_name(BlockKind kind);
BlockKind parse_block_kind(const std::string& name);
bool is_dynamic(BlockKind kind);

struct BlockSpec {
  BlockKind kind = BlockKind::DyMobile;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t stride = 1;
  std::size_t bank_size = 6;

  /// Rounds mobile-style widths up to a multiple of 6; bank size 1 for fixed kinds.
  BlockSpec normalized() const;
  void validate() const;
  bool operator==(const BlockSpec&) const = default;
};

/// One convolution of a block (always followed by batch norm).
struct LayerPlan {
  std::string name;
  ConvGeometry geom;
  bool dynamic = false;
  std::size_t bank_size = 1;
  bool relu = true;
};

enum class BlockTopology { Mobile, ShuffleSplit, ShuffleDown, ResNet };

/// Declarative layer list of a block, used by both the builder and the
/// FLOPs counter.
struct BlockPlan {
  BlockSpec spec;
  BlockTopology topology = BlockTopology::Mobile;
  std::vector<LayerPlan> main;         ///< the (right-branch) conv chain
  std::vector<LayerPlan> side;         ///< shuffle left branch or resnet projection
  bool residual = false;               ///< identity or projected skip added to output
  std::size_t branch_channels = 0;     ///< channels entering `main` for split shuffle units
  std::size_t predictor_in = 0;        ///< 0 when the block has no predictor
  std::size_t predictor_hidden = 0;    ///< 0 selects the single-linear predictor
  std::size_t coefficient_total() const;
};

BlockPlan plan_block(const BlockSpec& spec);

struct StemSpec {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  bool operator==(const StemSpec&) const = default;
};

/// Stem conv -> blocks -> global average pool -> fully connected classifier.
struct NetworkSpec {
  std::string name = "net";
  std::size_t input_channels = 3;
  std::size_t input_size = 32;
  std::size_t num_classes = 10;
  StemSpec stem;
  std::vector<BlockSpec> blocks;

  void validate() const;
  std::size_t feature_channels() const;
  bool operator==(const NetworkSpec&) const = default;
};

/// Line-oriented text form:
///   network <name>
///   input <channels> <size>
///   classes <count>
///   stem <out_channels> <kernel> <stride>
///   block <kind> <in> <out> <stride> <bank_size>
/// Blank lines and '#' comments are ignored.
std::string network_spec_to_text(const NetworkSpec& spec);
NetworkSpec parse_network_spec(const std::string& text);
NetworkSpec load_network_spec(const std::string& path);

/// Four mobile-style blocks on 32x32 input with 10 classes. `dynamic` selects
/// dy-mobile (bank size `bank_size`) or the fix-mobile control with the same
/// channel plan.
NetworkSpec tiny_mobile_spec(bool dynamic, std::size_t bank_size = 6);

template <typename T>
struct ConvUnit {
  LayerPlan plan;
  Parameter<T> weight;  ///< bank [C_out * g, C_in/groups, k, k] when dynamic
  Parameter<T> bn_scale;
  Parameter<T> bn_shift;
  BatchNormStats<T> bn_stats;
};

template <typename T>
struct PredictorParams {
  std::size_t in_channels = 0;
  std::size_t hidden = 0;
  Parameter<T> w1, b1, w2, b2;
  std::vector<ServedLayer> served;

  CoefficientPredictor<T> snapshot() const;
};

template <typename T>
struct Block {
  BlockPlan plan;
  std::vector<ConvUnit<T>> main;
  std::vector<ConvUnit<T>> side;
  std::optional<PredictorParams<T>> predictor;
};

template <typename T>
Block<T> build_block(const BlockSpec& spec, const std::string& prefix, Rng& rng);

/// Which of the two equivalent dynamic-conv evaluations to run.
enum class FusionPath {
  FeatureFusion,  ///< whole-bank conv then per-sample reduction (training)
  KernelFusion,   ///< per-sample fused kernel then one conv (inference)
};

/// Intermediate nodes recorded during a forward pass.
struct ForwardTaps {
  std::vector<NodeId> block_outputs;
  /// Sigmoid output of each block's predictor; nullopt for fixed blocks.
  std::vector<std::optional<NodeId>> coefficients;
};

template <typename T>
class Network {
 public:
  Network(const NetworkSpec& spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }

  /// Logits node. `taps`, when given, records per-block nodes.
  NodeId forward(Graph<T>& graph, NodeId input, Mode mode, FusionPath path, ForwardTaps* taps = nullptr);

  /// Eval-mode logits through the kernel-fusion path.
  Tensor<T> predict(const Tensor<T>& input);

  /// Trainable parameters in a fixed order.
  std::vector<Parameter<T>*> parameters();

  /// Every persistent tensor (parameters and batch-norm running statistics)
  /// under a stable dotted name, in a fixed order.
  std::vector<std::pair<std::string, Tensor<T>*>> state();

  /// Marks all batch-norm running statistics as present (after loading).
  void mark_stats_initialized();

  ConvUnit<T>& stem() { return stem_; }
  std::vector<Block<T>>& blocks() { return blocks_; }

 private:
  NodeId conv_unit(Graph<T>& g, ConvUnit<T>& unit, NodeId x, Mode mode, FusionPath path, NodeId eta_all,
                   std::size_t eta_offset);
  NodeId block_forward(Graph<T>& g, Block<T>& block, NodeId x, Mode mode, FusionPath path, ForwardTaps* taps);

  NetworkSpec spec_;
  ConvUnit<T> stem_;
  std::vector<Block<T>> blocks_;
  Parameter<T> fc_weight_;
  Parameter<T> fc_bias_;
};

/// Exact fraction with a positive denominator, kept in lowest terms.
struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  Rational() = default;
  Rational(std::int64_t n, std::int64_t d);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool operator==(const Rational&) const = default;
};

/// (6C + 27) / (C + 27): conv cost of a MobileNetV2 block over a dy-mobile
/// block with the same output width C (a positive multiple of 6).
Rational flops_ratio_dy_mobile(std::int64_t channels);

/// Multiply-accumulate counts.
struct FlopsEntry {
  std::string block;  ///< "stem", "block<i>" or "head"
  std::string layer;
  std::string kind;   ///< conv | dynconv | fusion | predictor | fc
  std::uint64_t macs = 0;
};

struct FlopsReport {
  std::vector<FlopsEntry> entries;

  std::uint64_t total() const;
  std::uint64_t conv_total() const;      ///< conv + dynconv + fc
  std::uint64_t overhead_total() const;  ///< fusion + predictor
  std::uint64_t block_conv(const std::string& block) const;
  std::uint64_t block_overhead(const std::string& block) const;
};

/// conv MACs = (C_in/groups) * C_out * H' * W' * k^2 on the fused-kernel
/// path; each dynamic layer adds C_out * g * (C_in/groups) * k^2 for fusion;
/// predictors add their linear-layer MACs.
FlopsReport count_flops(const NetworkSpec& net, std::size_t input_size = 0);

/// Same accounting for a single block at a given input resolution.
FlopsReport count_block_flops(const BlockSpec& spec, std::size_t input_size, const std::string& label = "block0");

std::uint64_t conv_macs(const ConvGeometry& geom, std::size_t out_h, std::size_t out_w);

}  // namespace dynet
