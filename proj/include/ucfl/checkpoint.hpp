/*
 * Copyright 2026 The ucfl Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef UCFL_CHECKPOINT_HPP
#define UCFL_CHECKPOINT_HPP

#include <cmath>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "ucfl/autoencoder.hpp"
#include "ucfl/core.hpp"
#include "ucfl/nn.hpp"

namespace ucfl {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json network_to_json(const DenseNetwork& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers()) {
        layers.push_back({{"in", l.in()},
                          {"out", l.out()},
                          {"activation", to_string(l.activation)},
                          {"frozen", l.frozen},
                          {"weights", l.weights.data()},
                          {"bias", l.bias}});
    }
    return {{"layers", layers}};
}

inline DenseNetwork network_from_json(const nlohmann::json& j) {
    std::vector<DenseLayer> layers;
    for (const auto& jl : j.at("layers")) {
        DenseLayer l;
        const auto in = jl.at("in").get<std::size_t>();
        const auto out = jl.at("out").get<std::size_t>();
        l.weights = Matrix(out, in);
        const auto w = jl.at("weights").get<std::vector<double>>();
        if (w.size() != in * out) throw Error("checkpoint: weight count does not match layer shape");
        l.weights.data() = w;
        l.bias = jl.at("bias").get<std::vector<double>>();
        l.activation = activation_from_string(jl.at("activation").get<std::string>());
        l.frozen = jl.at("frozen").get<bool>();
        layers.push_back(std::move(l));
    }
    return DenseNetwork(std::move(layers));
}

inline nlohmann::json autoencoder_to_json(const Autoencoder& ae) {
    nlohmann::json j = {{"format", "ucfl-autoencoder"},
                        {"version", kCheckpointVersion},
                        {"network", network_to_json(ae.network)},
                        {"bottleneck_layer", ae.bottleneck_layer},
                        {"normalizer", {{"offset", ae.normalizer.offset}, {"scale", ae.normalizer.scale}}},
                        {"epochs_trained", ae.epochs_trained},
                        {"total_parameters", ae.total_parameter_count()},
                        {"trainable_parameters", ae.network.trainable_parameter_count()}};
    j["final_loss"] = std::isnan(ae.final_loss) ? nlohmann::json(nullptr) : nlohmann::json(ae.final_loss);
    return j;
}

inline Autoencoder autoencoder_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "ucfl-autoencoder") throw Error("checkpoint: not an autoencoder checkpoint");
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw Error("checkpoint: unsupported version " + j.at("version").dump());
    Autoencoder ae;
    ae.network = network_from_json(j.at("network"));
    ae.bottleneck_layer = j.at("bottleneck_layer").get<std::size_t>();
    if (ae.bottleneck_layer >= ae.network.depth()) throw Error("checkpoint: bottleneck index out of range");
    ae.normalizer.offset = j.at("normalizer").at("offset").get<std::vector<double>>();
    ae.normalizer.scale = j.at("normalizer").at("scale").get<std::vector<double>>();
    ae.epochs_trained = j.at("epochs_trained").get<std::size_t>();
    if (!j.at("final_loss").is_null()) ae.final_loss = j.at("final_loss").get<double>();
    return ae;
}

inline void save_checkpoint(const std::filesystem::path& path, const Autoencoder& ae) {
    write_file_atomic(path, autoencoder_to_json(ae).dump(1) + "\n");
}

inline Autoencoder load_checkpoint(const std::filesystem::path& path) {
    return autoencoder_from_json(nlohmann::json::parse(read_file(path)));
}

}  // namespace ucfl

#endif  // UCFL_CHECKPOINT_HPP
