#include "dub/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "dub/io.hpp"

namespace dub {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    const std::string t = trim(text);
    T v{};
    auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || end != t.data() + t.size() || t.empty()) {
        throw std::invalid_argument("config: bad value for " + key + ": '" + text + "'");
    }
    return v;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& text) {
    std::vector<int> out;
    for (const std::string& f : detail::split_csv_line(text)) out.push_back(parse_number<int>(key, f));
    return out;
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

using Setter = std::function<void(PipelineConfig&, const std::string& key, const std::string& value)>;

template <typename T, typename Member>
Setter number(Member member) {
    return [member](PipelineConfig& c, const std::string& k, const std::string& v) {
        std::invoke(member, c) = parse_number<T>(k, v);
    };
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"arch.front_channels",
         [](PipelineConfig& c, const std::string& k, const std::string& v) { c.arch.front_channels = parse_int_list(k, v); }},
        {"arch.back_channels",
         [](PipelineConfig& c, const std::string& k, const std::string& v) { c.arch.back_channels = parse_int_list(k, v); }},
        {"arch.dilation", number<int>([](PipelineConfig& c) -> int& { return c.arch.dilation; })},
        {"arch.heads", number<int>([](PipelineConfig& c) -> int& { return c.arch.heads; })},
        {"arch.init_std", number<double>([](PipelineConfig& c) -> double& { return c.arch.init_std; })},
        {"arch.kernel_size", number<int>([](PipelineConfig& c) -> int& { return c.arch.kernel_size; })},

        {"train.epochs", number<int>([](PipelineConfig& c) -> int& { return c.train.epochs; })},
        {"train.learning_rate", number<double>([](PipelineConfig& c) -> double& { return c.train.learning_rate; })},
        {"train.variant",
         [](PipelineConfig& c, const std::string&, const std::string& v) { c.train.variant = parse_variant(trim(v)); }},
        {"train.fixed_sigma2", number<double>([](PipelineConfig& c) -> double& { return c.train.fixed_sigma2; })},
        {"train.sampling",
         [](PipelineConfig& c, const std::string& k, const std::string& v) {
             const std::string t = trim(v);
             if (t == "per_image") {
                 c.train.sampling = HeadSampling::per_image;
             } else if (t == "resampled_datasets") {
                 c.train.sampling = HeadSampling::resampled_datasets;
             } else {
                 throw std::invalid_argument("config: bad value for " + k + ": '" + v + "'");
             }
         }},

        {"scene.height", number<std::size_t>([](PipelineConfig& c) -> std::size_t& { return c.scene.height; })},
        {"scene.width", number<std::size_t>([](PipelineConfig& c) -> std::size_t& { return c.scene.width; })},
        {"scene.count_min", number<int>([](PipelineConfig& c) -> int& { return c.scene.count_min; })},
        {"scene.count_max", number<int>([](PipelineConfig& c) -> int& { return c.scene.count_max; })},
        {"scene.blob_sigma", number<double>([](PipelineConfig& c) -> double& { return c.scene.blob_sigma; })},
        {"scene.blob_amplitude", number<double>([](PipelineConfig& c) -> double& { return c.scene.blob_amplitude; })},
        {"scene.background_level",
         number<double>([](PipelineConfig& c) -> double& { return c.scene.background_level; })},
        {"scene.background_noise_std",
         number<double>([](PipelineConfig& c) -> double& { return c.scene.background_noise_std; })},
        {"scene.glare_probability",
         number<double>([](PipelineConfig& c) -> double& { return c.scene.glare_probability; })},
        {"scene.glare_strength", number<double>([](PipelineConfig& c) -> double& { return c.scene.glare_strength; })},
        {"scene.glare_min_size",
         number<std::size_t>([](PipelineConfig& c) -> std::size_t& { return c.scene.glare_min_size; })},
        {"scene.glare_max_size",
         number<std::size_t>([](PipelineConfig& c) -> std::size_t& { return c.scene.glare_max_size; })},
        {"scene.min_center_distance",
         number<double>([](PipelineConfig& c) -> double& { return c.scene.min_center_distance; })},

        {"kernel.beta", number<double>([](PipelineConfig& c) -> double& { return c.kernel.beta; })},
        {"kernel.k", number<int>([](PipelineConfig& c) -> int& { return c.kernel.k; })},
        {"kernel.sigma_floor", number<double>([](PipelineConfig& c) -> double& { return c.kernel.sigma_floor; })},
        {"kernel.sigma_default", number<double>([](PipelineConfig& c) -> double& { return c.kernel.sigma_default; })},
        {"kernel.truncate", number<double>([](PipelineConfig& c) -> double& { return c.kernel.truncate; })},

        {"data.train", number<std::size_t>([](PipelineConfig& c) -> std::size_t& { return c.sizes.train; })},
        {"data.val", number<std::size_t>([](PipelineConfig& c) -> std::size_t& { return c.sizes.val; })},
        {"data.test", number<std::size_t>([](PipelineConfig& c) -> std::size_t& { return c.sizes.test; })},
    };
    return table;
}

}  // namespace

PipelineConfig parse_config(const std::string& text, PipelineConfig base) {
    boost::property_tree::ptree tree;
    std::istringstream in(text);
    try {
        boost::property_tree::ini_parser::read_ini(in, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
        throw std::invalid_argument("config: " + e.message() + " at line " + std::to_string(e.line()));
    }
    for (const auto& [section, keys] : tree) {
        if (keys.empty() && !keys.data().empty()) {
            throw std::invalid_argument("config: key '" + section + "' outside of a section");
        }
        for (const auto& [key, value] : keys) {
            const std::string name = section + "." + key;
            const auto it = setters().find(name);
            if (it == setters().end()) throw std::invalid_argument("config: unknown key '" + name + "'");
            it->second(base, name, value.data());
        }
    }
    base.arch.validate();
    base.train.validate();
    base.scene.validate();
    base.kernel.validate();
    return base;
}

PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base) {
    return parse_config(detail::read_file(path), std::move(base));
}

std::string format_config(const PipelineConfig& c) {
    using detail::format_double;
    std::ostringstream o;
    o << "[arch]\n"
      << "front_channels = " << join(c.arch.front_channels) << "\n"
      << "back_channels = " << join(c.arch.back_channels) << "\n"
      << "dilation = " << c.arch.dilation << "\n"
      << "heads = " << c.arch.heads << "\n"
      << "init_std = " << format_double(c.arch.init_std) << "\n"
      << "kernel_size = " << c.arch.kernel_size << "\n\n"
      << "[train]\n"
      << "epochs = " << c.train.epochs << "\n"
      << "learning_rate = " << format_double(c.train.learning_rate) << "\n"
      << "variant = " << variant_name(c.train.variant) << "\n"
      << "fixed_sigma2 = " << format_double(c.train.fixed_sigma2) << "\n"
      << "sampling = " << (c.train.sampling == HeadSampling::per_image ? "per_image" : "resampled_datasets") << "\n\n"
      << "[scene]\n"
      << "height = " << c.scene.height << "\n"
      << "width = " << c.scene.width << "\n"
      << "count_min = " << c.scene.count_min << "\n"
      << "count_max = " << c.scene.count_max << "\n"
      << "blob_sigma = " << format_double(c.scene.blob_sigma) << "\n"
      << "blob_amplitude = " << format_double(c.scene.blob_amplitude) << "\n"
      << "background_level = " << format_double(c.scene.background_level) << "\n"
      << "background_noise_std = " << format_double(c.scene.background_noise_std) << "\n"
      << "glare_probability = " << format_double(c.scene.glare_probability) << "\n"
      << "glare_strength = " << format_double(c.scene.glare_strength) << "\n"
      << "glare_min_size = " << c.scene.glare_min_size << "\n"
      << "glare_max_size = " << c.scene.glare_max_size << "\n"
      << "min_center_distance = " << format_double(c.scene.min_center_distance) << "\n\n"
      << "[kernel]\n"
      << "beta = " << format_double(c.kernel.beta) << "\n"
      << "k = " << c.kernel.k << "\n"
      << "sigma_floor = " << format_double(c.kernel.sigma_floor) << "\n"
      << "sigma_default = " << format_double(c.kernel.sigma_default) << "\n"
      << "truncate = " << format_double(c.kernel.truncate) << "\n\n"
      << "[data]\n"
      << "train = " << c.sizes.train << "\n"
      << "val = " << c.sizes.val << "\n"
      << "test = " << c.sizes.test << "\n";
    return o.str();
}

}  // namespace dub
