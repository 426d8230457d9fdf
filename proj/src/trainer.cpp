#include "dub/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "dub/adam.hpp"
#include "dub/io.hpp"
#include "dub/random.hpp"

namespace dub {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::base: return "base";
        case Variant::aleatoric_only: return "aleatoric_only";
        case Variant::epistemic_only: return "epistemic_only";
        case Variant::combined: return "combined";
    }
    return "unknown";
}

Variant parse_variant(const std::string& name) {
    if (name == "base") return Variant::base;
    if (name == "aleatoric" || name == "aleatoric_only") return Variant::aleatoric_only;
    if (name == "epistemic" || name == "epistemic_only") return Variant::epistemic_only;
    if (name == "combined") return Variant::combined;
    throw std::invalid_argument("unknown variant '" + name + "'");
}

bool uses_predicted_variance(Variant v) { return v == Variant::aleatoric_only || v == Variant::combined; }
bool uses_all_heads(Variant v) { return v == Variant::epistemic_only || v == Variant::combined; }

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
    if (!(fixed_sigma2 > 0.0)) throw std::invalid_argument("train: fixed_sigma2 must be > 0");
}

Var heteroscedastic_loss(Graph& g, Var density, Var logvar, Var target) {
    Var sq = ops::square(g, ops::sub(g, target, density));
    Var precision = ops::exp(g, ops::scale(g, logvar, -1.0));
    Var per_pixel = ops::add(g, ops::scale(g, ops::mul(g, precision, sq), 0.5), ops::scale(g, logvar, 0.5));
    return ops::mean(g, per_pixel);
}

Var homoscedastic_loss(Graph& g, Var density, Var target, double sigma2) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("homoscedastic loss: sigma2 must be > 0");
    Var sq = ops::square(g, ops::sub(g, target, density));
    return ops::add_scalar(g, ops::scale(g, ops::mean(g, sq), 1.0 / (2.0 * sigma2)), 0.5 * std::log(sigma2));
}

Var mse_loss(Graph& g, Var density, Var target) {
    return ops::mean(g, ops::square(g, ops::sub(g, target, density)));
}

double loss_heteroscedastic(const HeadOutput& pred, const DensityMap& target) {
    Graph g;
    Var y = g.constant(pred.density);
    Var s = g.constant(pred.logvar);
    Var t = g.constant(target.values);
    return g.value(heteroscedastic_loss(g, y, s, t)).item();
}

double loss_homoscedastic(const Tensor& density, const DensityMap& target, double sigma2) {
    Graph g;
    Var y = g.constant(density);
    Var t = g.constant(target.values);
    return g.value(homoscedastic_loss(g, y, t, sigma2)).item();
}

ArchConfig effective_arch(const ArchConfig& arch, Variant variant) {
    ArchConfig a = arch;
    if (!uses_all_heads(variant)) a.heads = 1;
    return a;
}

void fix_logvar_head(DubNetParams& params, double sigma2) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("fix_logvar_head: sigma2 must be > 0");
    params.logvar.weight.fill(0.0);
    params.logvar.bias.fill(std::log(sigma2));
}

DubNetParams initial_params(const ArchConfig& arch, const TrainConfig& cfg) {
    DubNetParams params = init_params(effective_arch(arch, cfg.variant), derive_seed(cfg.seed, "init"));
    if (!uses_predicted_variance(cfg.variant)) fix_logvar_head(params, cfg.fixed_sigma2);
    return params;
}

namespace {

void validate_dataset(const std::vector<TrainingExample>& dataset, const ArchConfig& arch) {
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
    const std::size_t f = arch.downsample_factor();
    for (const TrainingExample& ex : dataset) {
        const Tensor& px = ex.image.pixels;
        if (px.rank() != 3 || px.dim(0) != 1 || px.dim(1) % f != 0 || px.dim(2) % f != 0) {
            throw std::invalid_argument("train: image '" + ex.image.id + "' shape " + shape_string(px.shape()) +
                                        " incompatible with downsample factor " + std::to_string(f));
        }
        const Shape expected{1, px.dim(1) / f, px.dim(2) / f};
        if (ex.target.values.shape() != expected) {
            throw std::invalid_argument("train: target for '" + ex.image.id + "' has shape " +
                                        shape_string(ex.target.values.shape()) + ", expected " +
                                        shape_string(expected));
        }
    }
}

// One forward/backward/update on a single image with head k.
double train_step(DubNetParams& params, AdamState& adam, const TrainingExample& ex, std::size_t k,
                  const TrainConfig& cfg) {
    Graph g;
    std::vector<ConvVars> trunk;
    trunk.reserve(params.trunk.size());
    for (const ConvLayer& l : params.trunk) trunk.push_back({g.parameter(l.weight), g.parameter(l.bias)});
    const ConvVars head{g.parameter(params.heads[k].weight), g.parameter(params.heads[k].bias)};
    const bool hetero = uses_predicted_variance(cfg.variant);
    ConvVars logvar{};
    if (hetero) logvar = {g.parameter(params.logvar.weight), g.parameter(params.logvar.bias)};

    Var features = trunk_forward(g, params.arch, trunk, g.constant(ex.image.pixels));
    Var density = density_head_forward(g, head, features);
    Var target = g.constant(ex.target.values);
    Var loss;
    switch (cfg.variant) {
        case Variant::base: loss = mse_loss(g, density, target); break;
        case Variant::epistemic_only: loss = homoscedastic_loss(g, density, target, cfg.fixed_sigma2); break;
        case Variant::aleatoric_only:
        case Variant::combined:
            loss = heteroscedastic_loss(g, density, logvar_head_forward(g, logvar, features), target);
            break;
    }
    g.backward(loss);

    std::vector<std::size_t> slots;
    std::vector<Tensor*> targets;
    std::vector<const Tensor*> grads;
    auto push = [&](std::size_t slot, Tensor& param, Var v) {
        slots.push_back(slot);
        targets.push_back(&param);
        grads.push_back(&g.grad(v));
    };
    for (std::size_t i = 0; i < params.trunk.size(); ++i) {
        push(params.trunk_slot(i), params.trunk[i].weight, trunk[i].weight);
        push(params.trunk_slot(i) + 1, params.trunk[i].bias, trunk[i].bias);
    }
    push(params.head_slot(k), params.heads[k].weight, head.weight);
    push(params.head_slot(k) + 1, params.heads[k].bias, head.bias);
    if (hetero) {
        push(params.logvar_slot(), params.logvar.weight, logvar.weight);
        push(params.logvar_slot() + 1, params.logvar.bias, logvar.bias);
    }
    adam_step(slots, targets, grads, adam);
    return g.value(loss).item();
}

}  // namespace

TrainResult train(const std::vector<TrainingExample>& dataset, const ArchConfig& arch, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
    cfg.validate();
    const ArchConfig eff = effective_arch(arch, cfg.variant);
    eff.validate();
    validate_dataset(dataset, eff);

    TrainResult result;
    result.params = initial_params(arch, cfg);

    std::vector<Tensor> snapshot;
    for (const Tensor* t : std::as_const(result.params).tensors()) snapshot.push_back(*t);
    AdamState adam(AdamConfig{cfg.learning_rate}, snapshot);

    const std::size_t n = dataset.size();
    const auto heads = static_cast<std::size_t>(eff.heads);
    std::mt19937_64 head_rng(derive_seed(cfg.seed, "heads"));
    std::mt19937_64 order_rng(derive_seed(cfg.seed, "shuffle"));
    std::uniform_int_distribution<std::size_t> pick_head(0, heads - 1);

    std::vector<std::vector<std::size_t>> resamples;
    if (cfg.sampling == HeadSampling::resampled_datasets) {
        std::mt19937_64 boot_rng(derive_seed(cfg.seed, "bootstrap"));
        std::uniform_int_distribution<std::size_t> pick_image(0, n - 1);
        resamples.assign(heads, std::vector<std::size_t>(n));
        for (auto& r : resamples) {
            for (std::size_t& i : r) i = pick_image(boot_rng);
        }
    }

    std::vector<std::size_t> order(n);
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        LossRecord rec;
        rec.epoch = epoch;
        rec.head_histogram.assign(heads, 0);
        double total = 0.0;
        for (std::size_t pos : order) {
            const std::size_t k = pick_head(head_rng);
            const std::size_t idx = resamples.empty() ? pos : resamples[k][pos];
            total += train_step(result.params, adam, dataset[idx], k, cfg);
            ++rec.head_histogram[k];
        }
        rec.mean_loss = total / static_cast<double>(n);
        if (on_epoch) on_epoch(rec);
        result.history.push_back(std::move(rec));
    }
    return result;
}

void write_loss_log(const std::filesystem::path& path, const std::vector<LossRecord>& history) {
    std::string text = "epoch,mean_loss";
    const std::size_t heads = history.empty() ? 0 : history.front().head_histogram.size();
    for (std::size_t k = 0; k < heads; ++k) text += ",head_" + std::to_string(k);
    text += "\n";
    for (const LossRecord& r : history) {
        text += std::to_string(r.epoch) + "," + detail::format_double(r.mean_loss);
        for (std::size_t c : r.head_histogram) text += "," + std::to_string(c);
        text += "\n";
    }
    detail::write_file(path, text);
}

}  // namespace dub
