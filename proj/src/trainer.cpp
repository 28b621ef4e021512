#include "ogs/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "ogs/oracle.hpp"

namespace ogs {

namespace {

std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// One Adam update for a contiguous scalar view of a parameter group.
void adam_update(double* param, double* m, double* v, const double* grad,
                 size_t n, double lr, double beta1, double beta2, double eps,
                 int64_t step) {
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

} // namespace

std::string to_string(UncertaintySource s) {
    switch (s) {
        case UncertaintySource::attached: return "attached";
        case UncertaintySource::oracle: return "oracle";
        case UncertaintySource::ones: return "ones";
    }
    return "attached";
}

UncertaintySource uncertainty_source_from_string(const std::string& s) {
    if (s == "attached") return UncertaintySource::attached;
    if (s == "oracle") return UncertaintySource::oracle;
    if (s == "ones") return UncertaintySource::ones;
    throw std::runtime_error("unknown uncertainty source '" + s + "'");
}

void TrainConfig::validate() const {
    if (iterations <= 0)
        throw std::runtime_error("train config: iterations must be > 0");
    const double lrs[] = {lr_position, lr_log_scale, lr_rotation, lr_opacity,
                          lr_sh};
    for (double lr : lrs)
        if (lr < 0) throw std::runtime_error("train config: negative lr");
    schedule.validate();
    loss.validate();
}

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig tc;
    tc.iterations = cfg.get_int("train.iterations", tc.iterations);
    tc.checkpoint_interval =
        cfg.get_int("train.checkpoint_interval", tc.checkpoint_interval);
    tc.lr_position = cfg.get_double("train.lr_position", tc.lr_position);
    tc.lr_position_final_factor = cfg.get_double(
        "train.lr_position_final_factor", tc.lr_position_final_factor);
    tc.lr_log_scale = cfg.get_double("train.lr_log_scale", tc.lr_log_scale);
    tc.lr_rotation = cfg.get_double("train.lr_rotation", tc.lr_rotation);
    tc.lr_opacity = cfg.get_double("train.lr_opacity", tc.lr_opacity);
    tc.lr_sh = cfg.get_double("train.lr_sh", tc.lr_sh);
    tc.adam_beta1 = cfg.get_double("train.adam_beta1", tc.adam_beta1);
    tc.adam_beta2 = cfg.get_double("train.adam_beta2", tc.adam_beta2);
    tc.adam_eps = cfg.get_double("train.adam_eps", tc.adam_eps);
    tc.seed = static_cast<uint64_t>(cfg.get_int("seed", static_cast<int64_t>(tc.seed)));
    tc.workers = static_cast<int>(cfg.get_int("workers", tc.workers));
    tc.background.x() = cfg.get_double("render.background_r", tc.background.x());
    tc.background.y() = cfg.get_double("render.background_g", tc.background.y());
    tc.background.z() = cfg.get_double("render.background_b", tc.background.z());

    tc.schedule.base = cfg.get_double("schedule.base", tc.schedule.base);
    tc.schedule.amplitude =
        cfg.get_double("schedule.amplitude", tc.schedule.amplitude);
    tc.schedule.alpha = cfg.get_double("schedule.alpha", tc.schedule.alpha);
    tc.schedule.beta = cfg.get_double("schedule.beta", tc.schedule.beta);
    std::string interp = cfg.get_string(
        "schedule.interpretation",
        tc.schedule.interpretation == ScheduleInterpretation::odds ? "odds"
                                                                   : "clamp");
    if (interp == "odds")
        tc.schedule.interpretation = ScheduleInterpretation::odds;
    else if (interp == "clamp")
        tc.schedule.interpretation = ScheduleInterpretation::clamp;
    else
        throw std::runtime_error("schedule.interpretation must be odds|clamp");
    tc.schedule.seed = tc.seed;

    tc.loss.lambda_ssim = cfg.get_double("loss.lambda_ssim", tc.loss.lambda_ssim);
    tc.loss.lambda_ssim_synth =
        cfg.get_double("loss.lambda_ssim_synth", tc.loss.lambda_ssim_synth);
    tc.loss.lambda_lpips =
        cfg.get_double("loss.lambda_lpips", tc.loss.lambda_lpips);
    tc.loss.lambda_depth0 =
        cfg.get_double("loss.lambda_depth0", tc.loss.lambda_depth0);
    tc.loss.lambda_depth1 =
        cfg.get_double("loss.lambda_depth1", tc.loss.lambda_depth1);
    tc.loss.lambda_opacity =
        cfg.get_double("loss.lambda_opacity", tc.loss.lambda_opacity);
    tc.loss.lambda_scale =
        cfg.get_double("loss.lambda_scale", tc.loss.lambda_scale);

    tc.init.fallback_scale =
        cfg.get_double("init.fallback_scale", tc.init.fallback_scale);
    tc.init.init_opacity =
        cfg.get_double("init.init_opacity", tc.init.init_opacity);
    tc.init.sh_degree =
        static_cast<int>(cfg.get_int("init.sh_degree", tc.init.sh_degree));
    tc.init.knn = static_cast<int>(cfg.get_int("init.knn", tc.init.knn));

    tc.render.tile_size =
        static_cast<int>(cfg.get_int("render.tile_size", tc.render.tile_size));
    tc.render.sigma_cutoff =
        cfg.get_double("render.sigma_cutoff", tc.render.sigma_cutoff);
    tc.render.cull_margin_px =
        cfg.get_double("render.cull_margin_px", tc.render.cull_margin_px);
    tc.render.cov2d_lowpass =
        cfg.get_double("render.cov2d_lowpass", tc.render.cov2d_lowpass);
    tc.render.det_floor = cfg.get_double("render.det_floor", tc.render.det_floor);
    tc.render.transmittance_min =
        cfg.get_double("render.transmittance_min", tc.render.transmittance_min);
    tc.render.accum_eps = cfg.get_double("render.accum_eps", tc.render.accum_eps);
    tc.render.workers = tc.workers;

    tc.uncertainty_source = uncertainty_source_from_string(cfg.get_string(
        "train.uncertainty_source", to_string(tc.uncertainty_source)));
    tc.oracle_sigma_photo =
        cfg.get_double("oracle.sigma_photo", tc.oracle_sigma_photo);
    std::string weights = cfg.get_string("oracle.layer_weights", "");
    if (!weights.empty()) {
        tc.fuse_weights.clear();
        size_t pos = 0;
        while (pos < weights.size()) {
            size_t comma = weights.find(',', pos);
            std::string item = weights.substr(
                pos, comma == std::string::npos ? std::string::npos
                                                : comma - pos);
            size_t colon = item.find(':');
            if (colon == std::string::npos)
                throw std::runtime_error(
                    "oracle.layer_weights expects 'layer:weight,...'");
            tc.fuse_weights[std::stoi(item.substr(0, colon))] =
                std::stod(item.substr(colon + 1));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
    }
    tc.validate();
    return tc;
}

Config to_config(const TrainConfig& tc) {
    Config cfg;
    cfg.set("seed", static_cast<int64_t>(tc.seed));
    cfg.set("workers", static_cast<int64_t>(tc.workers));
    cfg.set("train.iterations", tc.iterations);
    cfg.set("train.checkpoint_interval", tc.checkpoint_interval);
    cfg.set("train.lr_position", tc.lr_position);
    cfg.set("train.lr_position_final_factor", tc.lr_position_final_factor);
    cfg.set("train.lr_log_scale", tc.lr_log_scale);
    cfg.set("train.lr_rotation", tc.lr_rotation);
    cfg.set("train.lr_opacity", tc.lr_opacity);
    cfg.set("train.lr_sh", tc.lr_sh);
    cfg.set("train.adam_beta1", tc.adam_beta1);
    cfg.set("train.adam_beta2", tc.adam_beta2);
    cfg.set("train.adam_eps", tc.adam_eps);
    cfg.set("train.uncertainty_source", to_string(tc.uncertainty_source));
    cfg.set("render.background_r", tc.background.x());
    cfg.set("render.background_g", tc.background.y());
    cfg.set("render.background_b", tc.background.z());
    cfg.set("render.tile_size", static_cast<int64_t>(tc.render.tile_size));
    cfg.set("render.sigma_cutoff", tc.render.sigma_cutoff);
    cfg.set("render.cull_margin_px", tc.render.cull_margin_px);
    cfg.set("render.cov2d_lowpass", tc.render.cov2d_lowpass);
    cfg.set("render.det_floor", tc.render.det_floor);
    cfg.set("render.transmittance_min", tc.render.transmittance_min);
    cfg.set("render.accum_eps", tc.render.accum_eps);
    cfg.set("schedule.base", tc.schedule.base);
    cfg.set("schedule.amplitude", tc.schedule.amplitude);
    cfg.set("schedule.alpha", tc.schedule.alpha);
    cfg.set("schedule.beta", tc.schedule.beta);
    cfg.set("schedule.interpretation",
            tc.schedule.interpretation == ScheduleInterpretation::odds
                ? "odds"
                : "clamp");
    cfg.set("loss.lambda_ssim", tc.loss.lambda_ssim);
    cfg.set("loss.lambda_ssim_synth", tc.loss.lambda_ssim_synth);
    cfg.set("loss.lambda_lpips", tc.loss.lambda_lpips);
    cfg.set("loss.lambda_depth0", tc.loss.lambda_depth0);
    cfg.set("loss.lambda_depth1", tc.loss.lambda_depth1);
    cfg.set("loss.lambda_opacity", tc.loss.lambda_opacity);
    cfg.set("loss.lambda_scale", tc.loss.lambda_scale);
    cfg.set("init.fallback_scale", tc.init.fallback_scale);
    cfg.set("init.init_opacity", tc.init.init_opacity);
    cfg.set("init.sh_degree", static_cast<int64_t>(tc.init.sh_degree));
    cfg.set("init.knn", static_cast<int64_t>(tc.init.knn));
    cfg.set("oracle.sigma_photo", tc.oracle_sigma_photo);
    std::string weights;
    for (const auto& [layer, w] : tc.fuse_weights) {
        if (!weights.empty()) weights += ',';
        weights += std::to_string(layer) + ":" + format_double(w);
    }
    cfg.set("oracle.layer_weights", weights);
    return cfg;
}

void AdamMoments::resize_like(const GaussianCloud& cloud) {
    size_t n = cloud.count();
    m_pos.assign(n, Eigen::Vector3d::Zero());
    v_pos.assign(n, Eigen::Vector3d::Zero());
    m_ls.assign(n, Eigen::Vector3d::Zero());
    v_ls.assign(n, Eigen::Vector3d::Zero());
    m_rot.assign(n, Eigen::Vector4d::Zero());
    v_rot.assign(n, Eigen::Vector4d::Zero());
    m_op.assign(n, 0.0);
    v_op.assign(n, 0.0);
    m_sh.assign(cloud.sh_coeffs.size(), 0.0);
    v_sh.assign(cloud.sh_coeffs.size(), 0.0);
    step_count = 0;
}

TrainState make_train_state(const SceneBundle& bundle,
                            const TrainConfig& config) {
    config.validate();
    TrainState state;
    state.cloud = bundle.cloud;
    if (state.cloud.count() == 0) {
        if (bundle.seed_points.empty())
            throw std::runtime_error(
                "train: bundle has neither gaussians nor seed points");
        state.cloud = init_from_points(bundle.seed_points, config.init);
    }
    state.cloud.validate();
    state.moments.resize_like(state.cloud);
    state.rng = CounterRng(config.seed);

    for (size_t i = 0; i < bundle.views.size(); ++i) {
        switch (bundle.views[i].role) {
            case ViewRole::ground_truth:
                state.gt_views.push_back(static_cast<int>(i));
                break;
            case ViewRole::synthetic:
                state.synth_views.push_back(static_cast<int>(i));
                break;
            case ViewRole::test:
                state.test_views.push_back(static_cast<int>(i));
                break;
        }
    }
    if (state.gt_views.empty())
        throw std::runtime_error("train: bundle has no ground_truth view");

    // Resolve uncertainty maps for every synthetic view up front.
    for (int vi : state.synth_views) {
        const ViewRecord& view = bundle.views[vi];
        UncertaintyMap u;
        if (config.uncertainty_source == UncertaintySource::ones) {
            u.values = Plane(view.camera.height, view.camera.width, 1.0);
        } else if (view.uncertainty) {
            u = *view.uncertainty;
        } else if (view.attention) {
            u = fuse_uncertainty(*view.attention, config.fuse_weights,
                                 view.camera.height, view.camera.width);
        } else if (config.uncertainty_source == UncertaintySource::oracle) {
            std::vector<const ViewRecord*> neighbors;
            for (int gi : state.gt_views) neighbors.push_back(&bundle.views[gi]);
            u = reprojection_oracle(view, neighbors, config.oracle_sigma_photo);
        } else {
            throw std::runtime_error(
                "train: synthetic view " + std::to_string(vi) +
                " has no uncertainty map and no oracle fallback is configured");
        }
        state.synth_uncertainty.push_back(std::move(u));
    }
    return state;
}

StepReport train_step(TrainState& state, const SceneBundle& bundle,
                      int64_t iteration, const TrainConfig& config) {
    StepReport report;
    report.iteration = iteration;

    double t = config.iterations > 1
                   ? static_cast<double>(iteration) /
                         static_cast<double>(config.iterations - 1)
                   : 0.0;
    report.p_synth = sample_probability(t, config.schedule);
    report.lambda_depth = lambda_depth(config.loss, t);

    // Fixed rng order: one draw for the branch, one for the view index.
    double u_branch = state.rng.uniform();
    double u_view = state.rng.uniform();
    bool synthetic = u_branch < report.p_synth;
    report.branch = synthetic ? ViewRole::synthetic : ViewRole::ground_truth;

    const std::vector<int>& pool = synthetic ? state.synth_views : state.gt_views;

    CloudGrads grads;
    if (pool.empty()) {
        // Empty branch: the per-view loss is an empty sum, the regularizer
        // still applies. Keeps coupled-rng runs aligned.
        report.view_loss_applied = false;
        report.loss = regularizer(state.cloud, config.loss.lambda_opacity,
                                  config.loss.lambda_scale);
        grads.resize_like(state.cloud);
        regularizer_backward(state.cloud, config.loss.lambda_opacity,
                             config.loss.lambda_scale, &grads);
    } else {
        size_t k = std::min(pool.size() - 1,
                            static_cast<size_t>(u_view * pool.size()));
        report.view_index = pool[k];
        const ViewRecord& view = bundle.views[report.view_index];

        RenderOutput rendered =
            render(state.cloud, view.camera, config.background, config.render);

        TotalLoss tl;
        if (synthetic) {
            const UncertaintyMap& u = state.synth_uncertainty[k];
            tl = total_loss_synthetic(rendered, view, u, state.cloud,
                                      config.loss);
        } else {
            tl = total_loss_gt(rendered, view, state.cloud, config.loss, t);
        }
        if (!std::isfinite(tl.value))
            throw std::runtime_error(
                "train: non-finite loss at iteration " +
                std::to_string(iteration) + " on view " +
                std::to_string(report.view_index));
        report.view_loss_applied = true;
        report.loss = tl.value;

        grads = render_backward(state.cloud, *rendered.tape, tl.dL_dcolor,
                                tl.dL_dinv_depth);
        regularizer_backward(state.cloud, config.loss.lambda_opacity,
                             config.loss.lambda_scale, &grads);
    }

    // Adam step with per-group learning rates; groups with lr == 0 are
    // left untouched bit-for-bit.
    ++state.moments.step_count;
    int64_t step = state.moments.step_count;
    size_t n = state.cloud.count();

    double lr_pos =
        config.lr_position * std::pow(config.lr_position_final_factor, t);
    if (config.lr_position > 0 && lr_pos > 0) {
        adam_update(state.cloud.positions.data()->data(),
                    state.moments.m_pos.data()->data(),
                    state.moments.v_pos.data()->data(),
                    grads.positions.data()->data(), n * 3, lr_pos,
                    config.adam_beta1, config.adam_beta2, config.adam_eps, step);
    }
    if (config.lr_log_scale > 0) {
        adam_update(state.cloud.log_scales.data()->data(),
                    state.moments.m_ls.data()->data(),
                    state.moments.v_ls.data()->data(),
                    grads.log_scales.data()->data(), n * 3, config.lr_log_scale,
                    config.adam_beta1, config.adam_beta2, config.adam_eps, step);
    }
    if (config.lr_rotation > 0) {
        std::vector<double> qflat(n * 4), qgrad(n * 4);
        for (size_t i = 0; i < n; ++i) {
            qflat[i * 4 + 0] = state.cloud.rotations[i].w;
            qflat[i * 4 + 1] = state.cloud.rotations[i].x;
            qflat[i * 4 + 2] = state.cloud.rotations[i].y;
            qflat[i * 4 + 3] = state.cloud.rotations[i].z;
            for (int c = 0; c < 4; ++c) qgrad[i * 4 + c] = grads.rotations[i][c];
        }
        adam_update(qflat.data(), state.moments.m_rot.data()->data(),
                    state.moments.v_rot.data()->data(), qgrad.data(), n * 4,
                    config.lr_rotation, config.adam_beta1, config.adam_beta2,
                    config.adam_eps, step);
        for (size_t i = 0; i < n; ++i) {
            Quat q(qflat[i * 4 + 0], qflat[i * 4 + 1], qflat[i * 4 + 2],
                   qflat[i * 4 + 3]);
            state.cloud.rotations[i] = q.normalized();
        }
    }
    if (config.lr_opacity > 0) {
        adam_update(state.cloud.opacity_logits.data(),
                    state.moments.m_op.data(), state.moments.v_op.data(),
                    grads.opacity_logits.data(), n, config.lr_opacity,
                    config.adam_beta1, config.adam_beta2, config.adam_eps, step);
    }
    if (config.lr_sh > 0) {
        adam_update(state.cloud.sh_coeffs.data(), state.moments.m_sh.data(),
                    state.moments.v_sh.data(), grads.sh_coeffs.data(),
                    state.cloud.sh_coeffs.size(), config.lr_sh,
                    config.adam_beta1, config.adam_beta2, config.adam_eps, step);
    }

    return report;
}

void save_checkpoint(const SceneBundle& bundle, const GaussianCloud& cloud,
                     const AdamMoments& moments,
                     const std::filesystem::path& dir) {
    SceneBundle out = bundle;
    out.cloud = cloud;
    save_scene(out, dir);

    // Optimizer state: [2, total] tensor of first/second moments.
    size_t n = cloud.count();
    size_t total = n * 3 + n * 3 + n * 4 + n + cloud.sh_coeffs.size();
    Tensor t;
    t.dims = {2, static_cast<uint32_t>(total)};
    t.data.resize(t.size());
    auto pack = [&](const AdamMoments& mom, size_t row) {
        double* out_ptr = t.data.data() + row * total;
        size_t k = 0;
        const auto& mp = row == 0 ? mom.m_pos : mom.v_pos;
        const auto& ml = row == 0 ? mom.m_ls : mom.v_ls;
        const auto& mr = row == 0 ? mom.m_rot : mom.v_rot;
        const auto& mo = row == 0 ? mom.m_op : mom.v_op;
        const auto& ms = row == 0 ? mom.m_sh : mom.v_sh;
        for (size_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) out_ptr[k++] = mp[i][c];
        for (size_t i = 0; i < n; ++i)
            for (int c = 0; c < 3; ++c) out_ptr[k++] = ml[i][c];
        for (size_t i = 0; i < n; ++i)
            for (int c = 0; c < 4; ++c) out_ptr[k++] = mr[i][c];
        for (size_t i = 0; i < n; ++i) out_ptr[k++] = mo[i];
        for (size_t i = 0; i < ms.size(); ++i) out_ptr[k++] = ms[i];
    };
    pack(moments, 0);
    pack(moments, 1);
    write_tensor(dir / "optim_state.ogt", t);
}

TrainResult train(const SceneBundle& bundle, const TrainConfig& config,
                  const std::filesystem::path& out_dir) {
    TrainState state = make_train_state(bundle, config);

    std::ofstream metrics;
    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        to_config(config).save(out_dir / "effective_config.cfg");
        metrics.open(out_dir / "metrics.csv");
        metrics << "iteration,branch,loss,psnr_test,lambda_depth,p_synth\n";
    }

    TrainResult result;
    for (int64_t it = 0; it < config.iterations; ++it) {
        StepReport rep = train_step(state, bundle, it, config);

        bool cadence = config.checkpoint_interval > 0 &&
                       (it + 1) % config.checkpoint_interval == 0;
        bool last = it + 1 == config.iterations;

        MetricsRow row;
        row.iteration = rep.iteration;
        row.branch = rep.view_loss_applied ? to_string(rep.branch) : "none";
        row.loss = rep.loss;
        row.lambda_depth = rep.lambda_depth;
        row.p_synth = rep.p_synth;

        if ((cadence || last) && !state.test_views.empty()) {
            double sum = 0;
            for (int vi : state.test_views) {
                const ViewRecord& view = bundle.views[vi];
                RenderOutput ro = render(state.cloud, view.camera,
                                         config.background, config.render);
                sum += psnr(ro.color, view.image);
            }
            row.psnr_test = sum / state.test_views.size();
        }

        if (metrics.is_open()) {
            metrics << row.iteration << ',' << row.branch << ','
                    << format_double(row.loss) << ',';
            if (row.psnr_test) metrics << format_double(*row.psnr_test);
            metrics << ',' << format_double(row.lambda_depth) << ','
                    << format_double(row.p_synth) << '\n';
        }
        result.trace.push_back(std::move(row));

        if (!out_dir.empty() && cadence && !last) {
            char name[48];
            std::snprintf(name, sizeof(name), "checkpoint_%06lld",
                          static_cast<long long>(it + 1));
            save_checkpoint(bundle, state.cloud, state.moments, out_dir / name);
        }
    }

    if (!out_dir.empty())
        save_checkpoint(bundle, state.cloud, state.moments, out_dir / "final");

    result.cloud = std::move(state.cloud);
    return result;
}

} // namespace ogs
