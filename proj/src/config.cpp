#include "cit3d/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <set>
#include <sstream>
#include <vector>

#include "cit3d/error.hpp"

namespace cit3d {

CameraPose CameraSettings::pose() const {
    CameraPose c;
    c.azimuth = deg_to_rad(azimuth_deg);
    c.elevation = deg_to_rad(elevation_deg);
    c.radius = radius;
    c.fov_y = deg_to_rad(fov_deg);
    c.width = width;
    c.height = height;
    return c;
}

TimestepSchedule GuidanceSettings::schedule() const {
    return TimestepSchedule::linear_beta(timesteps, beta_start, beta_end,
                                         weighting == "uniform" ? TimestepSchedule::Weighting::Uniform
                                                                : TimestepSchedule::Weighting::SigmaSquared);
}

std::filesystem::path RunConfig::work_dir() const {
    const std::filesystem::path p(run.work_dir);
    return p.is_absolute() ? p : base_dir / p;
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string format_number(double v) {
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

template <class T>
T parse_scalar(const std::string& key, const std::string& text) {
    T v{};
    const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
    if (r.ec != std::errc() || r.ptr != text.data() + text.size()) {
        throw ConfigError(key, "cannot parse '" + text + "' as a number");
    }
    if constexpr (std::is_floating_point_v<T>) {
        if (!std::isfinite(v)) throw ConfigError(key, "must be finite");
    }
    return v;
}

struct Key {
    std::string name;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
};

struct Range {
    double lo;
    double hi;
    bool lo_open = false;
};

class Registry {
  public:
    std::vector<Key> keys;

    void real(std::string name, double& ref, Range r) {
        keys.push_back({name,
                        [name, &ref, r](const std::string& t) {
                            const double v = parse_scalar<double>(name, t);
                            if ((r.lo_open ? !(v > r.lo) : !(v >= r.lo)) || !(v <= r.hi)) {
                                throw ConfigError(name, "value " + t + " outside " + (r.lo_open ? "(" : "[") +
                                                            format_number(r.lo) + ", " + format_number(r.hi) + "]");
                            }
                            ref = v;
                        },
                        [&ref] { return format_number(ref); }});
    }

    void integer(std::string name, int& ref, int lo, int hi) {
        keys.push_back({name,
                        [name, &ref, lo, hi](const std::string& t) {
                            const int v = parse_scalar<int>(name, t);
                            if (v < lo || v > hi) {
                                throw ConfigError(name, "value " + t + " outside [" + std::to_string(lo) + ", " +
                                                            std::to_string(hi) + "]");
                            }
                            ref = v;
                        },
                        [&ref] { return std::to_string(ref); }});
    }

    void seed(std::string name, std::uint64_t& ref) {
        keys.push_back({name, [name, &ref](const std::string& t) { ref = parse_scalar<std::uint64_t>(name, t); },
                        [&ref] { return std::to_string(ref); }});
    }

    void choice(std::string name, std::string& ref, std::initializer_list<const char*> options) {
        std::vector<std::string> opts(options.begin(), options.end());
        keys.push_back({name,
                        [name, &ref, opts](const std::string& t) {
                            for (const auto& o : opts) {
                                if (o == t) {
                                    ref = t;
                                    return;
                                }
                            }
                            std::string list;
                            for (const auto& o : opts) list += (list.empty() ? "" : "|") + o;
                            throw ConfigError(name, "expected one of " + list + ", got '" + t + "'");
                        },
                        [&ref] { return ref; }});
    }

    void text(std::string name, std::string& ref, bool single_token) {
        keys.push_back({name,
                        [name, &ref, single_token](const std::string& t) {
                            if (t.empty()) throw ConfigError(name, "must not be empty");
                            if (single_token && t.find_first_of(" \t") != std::string::npos) {
                                throw ConfigError(name, "must be a single token");
                            }
                            ref = t;
                        },
                        [&ref] { return ref; }});
    }

    void vec3(std::string name, Vec3& ref) {
        keys.push_back({name,
                        [name, &ref](const std::string& t) {
                            std::istringstream in(t);
                            std::string parts[3];
                            std::string extra;
                            if (!(in >> parts[0] >> parts[1] >> parts[2]) || (in >> extra)) {
                                throw ConfigError(name, "expected three numbers");
                            }
                            for (int a = 0; a < 3; ++a) ref[a] = parse_scalar<double>(name, parts[a]);
                        },
                        [&ref] {
                            return format_number(ref.x) + " " + format_number(ref.y) + " " + format_number(ref.z);
                        }});
    }

    void shape(std::string name, SceneShape& ref) {
        keys.push_back({name,
                        [name, &ref](const std::string& t) {
                            try {
                                ref = parse_scene_shape(t);
                            } catch (const std::exception& e) {
                                throw ConfigError(name, e.what());
                            }
                        },
                        [&ref] { return std::string(to_string(ref)); }});
    }
};

constexpr double kBig = 1e12;

Registry registry(RunConfig& c) {
    Registry r;
    r.shape("scene.shape", c.scene.shape);
    r.real("scene.sphere_radius", c.scene.sphere_radius, {0.0, kBig, true});
    r.vec3("scene.sphere_center", c.scene.sphere_center);
    r.real("scene.box_half_size", c.scene.box_half_size, {0.0, kBig, true});
    r.vec3("scene.box_center", c.scene.box_center);
    r.real("scene.color_frequency", c.scene.color_frequency, {0.0, 1e3});
    r.integer("scene.supersample", c.scene.supersample, 1, 8);

    r.real("camera.azimuth_deg", c.camera.azimuth_deg, {-360.0, 360.0});
    r.real("camera.elevation_deg", c.camera.elevation_deg, {-89.0, 89.0});
    r.real("camera.radius", c.camera.radius, {0.0, kBig, true});
    r.real("camera.fov_deg", c.camera.fov_deg, {0.0, 179.0, true});
    r.integer("camera.width", c.camera.width, 1, 4096);
    r.integer("camera.height", c.camera.height, 1, 4096);

    r.integer("field.resolution", c.field.resolution, 2, 512);
    r.real("field.bbox_half", c.field.bbox_half, {0.0, kBig, true});
    r.real("field.init_density", c.field.init_density, {-50.0, 50.0});
    r.real("field.init_albedo", c.field.init_albedo, {-50.0, 50.0});

    r.integer("render.samples", c.render.samples, 1, 4096);
    r.integer("render.eval_samples", c.render.eval_samples, 1, 4096);
    r.real("render.background", c.render.background, {0.0, 1.0});

    r.choice("guidance.provider", c.guidance.provider, {"oracle", "zero"});
    r.real("guidance.lambda_ss2d", c.guidance.lambda_ss2d, {0.0, kBig});
    r.real("guidance.lambda_ss3d", c.guidance.lambda_ss3d, {0.0, kBig});
    r.integer("guidance.timesteps", c.guidance.timesteps, 2, 100000);
    r.real("guidance.beta_start", c.guidance.beta_start, {0.0, 1.0, true});
    r.real("guidance.beta_end", c.guidance.beta_end, {0.0, 1.0, true});
    r.choice("guidance.weighting", c.guidance.weighting, {"sigma2", "uniform"});
    r.integer("guidance.t_min", c.guidance.t_min, 0, 100000);
    r.integer("guidance.t_max", c.guidance.t_max, 0, 100000);
    r.text("guidance.identifier", c.guidance.prompt.identifier, true);
    r.text("guidance.class_name", c.guidance.prompt.class_name, false);
    r.text("guidance.caption", c.guidance.prompt.caption, false);

    r.integer("coarse.steps", c.coarse.steps, 0, 10000000);
    r.choice("coarse.optimizer", c.coarse.optimizer, {"sgd", "adam"});
    r.real("coarse.lr_density", c.coarse.lr_density, {0.0, kBig});
    r.real("coarse.lr_albedo", c.coarse.lr_albedo, {0.0, kBig});
    r.real("coarse.momentum", c.coarse.momentum, {0.0, 0.999});
    r.real("coarse.weight_reference", c.coarse.weight_reference, {0.0, kBig});
    r.real("coarse.weight_depth", c.coarse.weight_depth, {0.0, kBig});
    r.real("coarse.normal_probability", c.coarse.normal_probability, {0.0, 1.0});
    r.real("coarse.range_start_deg", c.coarse.range_start_deg, {0.0, 360.0});
    r.real("coarse.growth_fraction", c.coarse.growth_fraction, {0.0, 1.0, true});
    r.real("coarse.elevation_min_deg", c.coarse.elevation_min_deg, {-89.0, 89.0});
    r.real("coarse.elevation_max_deg", c.coarse.elevation_max_deg, {-89.0, 89.0});

    r.real("extract.iso", c.extract.iso, {0.0, kBig});
    r.integer("extract.smooth_iterations", c.extract.smooth_iterations, 0, 10000);
    r.real("extract.smooth_lambda", c.extract.smooth_lambda, {0.0, 1.0});
    r.real("extract.spacing", c.extract.spacing, {0.0, kBig, true});
    r.integer("extract.max_rejections", c.extract.max_rejections, 1, 100000000);

    r.integer("texproj.views", c.texproj.views, 0, 360);
    r.real("texproj.splat_radius_factor", c.texproj.splat_radius_factor, {0.0, 100.0, true});
    r.real("texproj.depth_epsilon_factor", c.texproj.depth_epsilon_factor, {0.0, 100.0, true});
    r.choice("texproj.order", c.texproj.order, {"azimuth", "input"});

    r.integer("refine.steps", c.refine.steps, 0, 10000000);
    r.real("refine.lr_features", c.refine.lr_features, {0.0, kBig});
    r.real("refine.lr_renderer", c.refine.lr_renderer, {0.0, kBig});
    r.choice("refine.enhancer", c.refine.enhancer, {"oracle", "identity"});
    r.real("refine.strength", c.refine.strength, {0.0, 1.0});
    r.real("refine.mask_threshold", c.refine.mask_threshold, {0.0, 1.0});
    r.real("refine.rho_px", c.refine.rho_px, {0.0, 100.0, true});

    r.text("run.work_dir", c.run.work_dir, false);
    r.seed("run.seed", c.run.seed);
    return r;
}

bool in_section(const std::string& key, const std::string& section) {
    return section.empty() || key.rfind(section + ".", 0) == 0;
}

} // namespace

void RunConfig::validate() const {
    scene.validate();
    if (guidance.beta_end < guidance.beta_start) throw ConfigError("guidance.beta_end", "must be >= beta_start");
    if (guidance.t_max >= guidance.timesteps) throw ConfigError("guidance.t_max", "must be below guidance.timesteps");
    if (guidance.t_min > guidance.t_max) throw ConfigError("guidance.t_min", "must not exceed guidance.t_max");
    if (coarse.elevation_min_deg > coarse.elevation_max_deg) {
        throw ConfigError("coarse.elevation_min_deg", "must not exceed coarse.elevation_max_deg");
    }
    if (camera.radius <= field.bbox_half * std::sqrt(3.0)) {
        throw ConfigError("camera.radius", "camera must sit outside the field box");
    }
}

void apply_config_text(RunConfig& config, std::istream& in, const std::string& only_section) {
    Registry reg = registry(config);
    std::set<std::string> seen;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line_no), "expected 'section.key = value'");
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (!in_section(key, only_section)) throw ConfigError(key, "key not allowed here");
        if (!seen.insert(key).second) throw ConfigError(key, "duplicate key");
        bool found = false;
        for (Key& k : reg.keys) {
            if (k.name == key) {
                k.set(value);
                found = true;
                break;
            }
        }
        if (!found) throw ConfigError(key, "unknown key");
    }
}

RunConfig parse_config(std::istream& in, const std::filesystem::path& base_dir) {
    RunConfig c;
    c.base_dir = base_dir;
    apply_config_text(c, in);
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError(path.string(), "cannot open config");
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    return parse_config(f, dir);
}

void write_config(std::ostream& out, const RunConfig& config, const std::string& only_section) {
    RunConfig copy = config;
    Registry reg = registry(copy);
    for (const Key& k : reg.keys) {
        if (in_section(k.name, only_section)) out << k.name << " = " << k.get() << '\n';
    }
}

} // namespace cit3d
