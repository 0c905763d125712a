#pragma once

// Synthetic ground plane: pedestrians random-walk on an H x W grid, at most one
// per cell and at most one cell per frame.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pib/error.hpp"
#include "pib/numerics/tensor.hpp"
#include "pib/random.hpp"

namespace pib::scene {

struct WorldConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t min_pedestrians = 5;
  std::size_t max_pedestrians = 15;
  std::size_t frames = 400;
  double move_probability = 0.8;

  std::size_t cells() const { return height * width; }

  void validate() const {
    if (height == 0 || width == 0) throw ConfigError("world: grid must be non-empty");
    if (min_pedestrians > max_pedestrians) throw ConfigError("world: min pedestrians above max");
    if (max_pedestrians > cells()) throw ConfigError("world: more pedestrians than cells");
    if (move_probability < 0.0 || move_probability > 1.0) throw ConfigError("world: move probability outside [0, 1]");
  }
};

struct Pedestrian {
  std::size_t cell = 0;
  std::uint32_t id = 0;

  friend bool operator==(const Pedestrian&, const Pedestrian&) = default;
};

struct Frame {
  std::size_t index = 0;
  std::vector<Pedestrian> pedestrians;

  friend bool operator==(const Frame&, const Frame&) = default;
};

struct World {
  WorldConfig config;
  std::uint64_t seed = 0;
  std::vector<Frame> frames;

  std::size_t size() const { return frames.size(); }

  // Binary ground truth Y_t as a 1 x H x W tensor.
  Tensor occupancy(std::size_t t) const {
    Tensor grid(Shape{1, config.height, config.width});
    for (const Pedestrian& p : frames.at(t).pedestrians) grid[p.cell] = 1.0;
    return grid;
  }
};

inline World generate_world(std::uint64_t seed, const WorldConfig& config) {
  config.validate();
  Rng rng(seed);
  World world{config, seed, {}};
  const std::size_t span = config.max_pedestrians - config.min_pedestrians + 1;
  const std::size_t count = config.min_pedestrians + static_cast<std::size_t>(rng.below(span));

  std::vector<char> occupied(config.cells(), 0);
  Frame current{0, {}};
  // Distinct starting cells by partial Fisher-Yates.
  std::vector<std::size_t> cells(config.cells());
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(cells.size() - i));
    std::swap(cells[i], cells[j]);
    current.pedestrians.push_back(Pedestrian{cells[i], static_cast<std::uint32_t>(i)});
    occupied[cells[i]] = 1;
  }

  const int dy[4] = {-1, 1, 0, 0};
  const int dx[4] = {0, 0, -1, 1};
  for (std::size_t t = 0; t < config.frames; ++t) {
    current.index = t;
    world.frames.push_back(current);
    for (Pedestrian& p : current.pedestrians) {
      if (!rng.bernoulli(config.move_probability)) continue;
      const std::size_t dir = static_cast<std::size_t>(rng.below(4));
      const auto y = static_cast<long>(p.cell / config.width) + dy[dir];
      const auto x = static_cast<long>(p.cell % config.width) + dx[dir];
      if (y < 0 || x < 0 || y >= static_cast<long>(config.height) || x >= static_cast<long>(config.width)) continue;
      const std::size_t target = static_cast<std::size_t>(y) * config.width + static_cast<std::size_t>(x);
      if (occupied[target]) continue;
      occupied[p.cell] = 0;
      occupied[target] = 1;
      p.cell = target;
    }
  }
  return world;
}

// World files are JSON:
//   {"format": "pib-world", "version": 1, "seed": S,
//    "config": {"height", "width", "min_pedestrians", "max_pedestrians", "frames", "move_probability"},
//    "frames": [[[cell, id], ...], ...]}
inline nlohmann::json world_to_json(const World& world) {
  nlohmann::json frames = nlohmann::json::array();
  for (const Frame& f : world.frames) {
    nlohmann::json peds = nlohmann::json::array();
    for (const Pedestrian& p : f.pedestrians) peds.push_back({p.cell, p.id});
    frames.push_back(std::move(peds));
  }
  const WorldConfig& c = world.config;
  return {{"format", "pib-world"},
          {"version", 1},
          {"seed", world.seed},
          {"config",
           {{"height", c.height},
            {"width", c.width},
            {"min_pedestrians", c.min_pedestrians},
            {"max_pedestrians", c.max_pedestrians},
            {"frames", c.frames},
            {"move_probability", c.move_probability}}},
          {"frames", std::move(frames)}};
}

inline World world_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "pib-world" || j.at("version") != 1) throw IoError("world file: bad format tag or version");
    World w;
    w.seed = j.at("seed").get<std::uint64_t>();
    const auto& c = j.at("config");
    w.config.height = c.at("height");
    w.config.width = c.at("width");
    w.config.min_pedestrians = c.at("min_pedestrians");
    w.config.max_pedestrians = c.at("max_pedestrians");
    w.config.frames = c.at("frames");
    w.config.move_probability = c.at("move_probability");
    w.config.validate();
    std::size_t t = 0;
    for (const auto& f : j.at("frames")) {
      Frame frame{t++, {}};
      for (const auto& p : f) {
        Pedestrian ped{p.at(0).get<std::size_t>(), p.at(1).get<std::uint32_t>()};
        if (ped.cell >= w.config.cells()) throw IoError("world file: pedestrian cell out of range");
        frame.pedestrians.push_back(ped);
      }
      w.frames.push_back(std::move(frame));
    }
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("world file: ") + e.what());
  }
}

inline void save_world(const std::string& path, const World& world) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << world_to_json(world).dump(1) << '\n';
}

inline World load_world(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("world file '" + path + "': " + e.what());
  }
  return world_from_json(j);
}

}  // namespace pib::scene
