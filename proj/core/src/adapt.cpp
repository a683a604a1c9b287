#include "reid/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "reid/errors.hpp"

namespace reid {

void SoftLabeling::validate() const {
    if (num_classes != static_cast<int>(anchor_ids.size()))
        throw InvalidArgument("soft labeling: class count != anchor image count");
    std::vector<int> seen(static_cast<std::size_t>(num_classes), 0);
    for (const auto& [id, cls] : labels) {
        if (cls < 0 || cls >= num_classes) throw InvalidArgument("soft labeling: class out of range");
        ++seen[static_cast<std::size_t>(cls)];
    }
    for (std::size_t c = 0; c < anchor_ids.size(); ++c) {
        auto it = labels.find(anchor_ids[c]);
        if (it == labels.end() || it->second != static_cast<int>(c))
            throw InvalidArgument("soft labeling: anchor image must carry its own class");
    }
}

SoftLabeling soft_labels_from_features(const FeatureMatrix& features, const std::vector<int>& view_a_rows,
                                       const std::vector<int>& view_b_rows, int anchor_view,
                                       int matched_view) {
    features.validate();
    if (view_a_rows.empty()) throw InvalidArgument("soft labels: anchor view is empty");

    SoftLabeling out;
    out.anchor_view = anchor_view;
    out.matched_view = matched_view;
    out.num_classes = static_cast<int>(view_a_rows.size());
    for (std::size_t c = 0; c < view_a_rows.size(); ++c) {
        const int row = view_a_rows[c];
        out.anchor_ids.push_back(features.image_ids[static_cast<std::size_t>(row)]);
        out.labels[features.image_ids[static_cast<std::size_t>(row)]] = static_cast<int>(c);
    }
    for (int brow : view_b_rows) {
        double best = std::numeric_limits<double>::infinity();
        int best_class = 0;
        for (std::size_t c = 0; c < view_a_rows.size(); ++c) {
            const double d = (features.features.row(brow) - features.features.row(view_a_rows[c])).squaredNorm();
            if (d < best) {  // strict: ties keep the smaller anchor index
                best = d;
                best_class = static_cast<int>(c);
            }
        }
        out.labels[features.image_ids[static_cast<std::size_t>(brow)]] = best_class;
    }
    out.validate();
    return out;
}

Eigen::MatrixXd build_cross_view_graph(const FeatureMatrix& features, const std::vector<int>& view_a_rows,
                                       const std::vector<int>& view_b_rows, int k) {
    features.validate();
    if (k < 1) throw InvalidArgument("graph k must be >= 1");
    if (view_a_rows.empty() || view_b_rows.empty())
        throw InvalidArgument("cross-view graph needs two non-empty views");
    if (k > static_cast<int>(view_a_rows.size()) || k > static_cast<int>(view_b_rows.size()))
        throw InvalidArgument("graph k exceeds the opposite view size");

    const Eigen::Index m = features.features.rows();
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, m);

    auto connect = [&](const std::vector<int>& from, const std::vector<int>& to) {
        for (int i : from) {
            std::vector<std::pair<double, int>> dist;
            dist.reserve(to.size());
            for (int j : to)
                dist.emplace_back((features.features.row(i) - features.features.row(j)).squaredNorm(), j);
            std::stable_sort(dist.begin(), dist.end(), [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return a.second < b.second;
            });
            for (int n = 0; n < k; ++n) w(i, dist[static_cast<std::size_t>(n)].second) = 1.0;
        }
    };
    connect(view_a_rows, view_b_rows);
    connect(view_b_rows, view_a_rows);

    w = w.cwiseMax(w.transpose().eval());  // symmetrise
    w.diagonal().setZero();
    return w;
}

Eigen::MatrixXd graph_laplacian(const Eigen::MatrixXd& w) {
    Eigen::MatrixXd l = -w;
    l.diagonal() += w.rowwise().sum();
    return l;
}

double graph_penalty(const Eigen::MatrixXd& codes, const Eigen::MatrixXd& w) {
    if (w.rows() != w.cols()) throw ShapeError("graph affinity must be square");
    if (codes.cols() != w.rows()) throw ShapeError("code columns must match affinity size");
    const double scale = std::max(1.0, w.cwiseAbs().maxCoeff());
    if ((w - w.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw InvalidArgument("graph penalty requires a symmetric affinity matrix");
    double sum = 0.0;
    for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j)
            if (w(i, j) != 0) sum += w(i, j) * (codes.col(i) - codes.col(j)).squaredNorm();
    return sum;
}

DictObjective dict_objective(const Eigen::MatrixXd& dict, const Eigen::MatrixXd& codes,
                             const Eigen::MatrixXd& y_columns, const Eigen::MatrixXd& w, double lambda) {
    DictObjective obj;
    obj.recon = (y_columns - dict * codes).squaredNorm();
    obj.graph = graph_penalty(codes, w);
    obj.total = obj.recon + lambda * obj.graph;
    return obj;
}

namespace {

constexpr double kRidgeEps = 1e-10;

}  // namespace

namespace {

// Exact Z given D: the stationary condition D^T D Z + 2 lambda Z L = D^T Y,
// solved per column in the Laplacian eigenbasis (u, lap_ev).
Eigen::MatrixXd solve_codes(const Eigen::MatrixXd& dict, const Eigen::MatrixXd& y_columns,
                            const Eigen::MatrixXd& u, const Eigen::VectorXd& lap_ev, double lambda) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> gram_eig(dict.transpose() * dict);
    if (gram_eig.info() != Eigen::Success) throw NumericError("Gram eigendecomposition failed");
    const Eigen::MatrixXd v = gram_eig.eigenvectors();
    const Eigen::VectorXd gram_ev = gram_eig.eigenvalues().cwiseMax(0.0);
    const Eigen::MatrixXd rhs = v.transpose() * (dict.transpose() * y_columns) * u;
    Eigen::MatrixXd zt(dict.cols(), y_columns.cols());
    for (Eigen::Index col = 0; col < y_columns.cols(); ++col) {
        const double shift = 2.0 * lambda * lap_ev[col];
        zt.col(col) = rhs.col(col).cwiseQuotient((gram_ev.array() + shift + kRidgeEps).matrix());
    }
    return v * zt * u.transpose();
}

}  // namespace

DictModel solve_graph_dictionary(const Eigen::MatrixXd& y_columns, const Eigen::MatrixXd& w, double lambda,
                                 int k_atoms, int max_iters, std::uint64_t seed) {
    const Eigen::Index dim = y_columns.rows();
    const Eigen::Index m = y_columns.cols();
    if (k_atoms < 1) throw InvalidArgument("k_atoms must be >= 1");
    if (lambda < 0) throw InvalidArgument("lambda must be >= 0");
    if (max_iters < 1) throw InvalidArgument("solver needs at least one iteration");
    if (w.rows() != m || w.cols() != m) throw ShapeError("affinity size must match the sample count");
    if (!y_columns.allFinite()) throw NumericError("solver input contains NaN/Inf");

    DictModel model;
    model.w = w;
    model.lambda = lambda;

    // Atoms start as (normalised) data columns; extra atoms beyond the sample
    // count are random directions.
    Rng rng(seed);
    model.dict.resize(dim, k_atoms);
    std::vector<int> col_picks;
    if (k_atoms <= static_cast<int>(m))
        col_picks = rng.sample_without_replacement(static_cast<int>(m), k_atoms);
    for (int a = 0; a < k_atoms; ++a) {
        Eigen::VectorXd atom;
        if (a < static_cast<int>(col_picks.size()))
            atom = y_columns.col(col_picks[static_cast<std::size_t>(a)]);
        else {
            atom.resize(dim);
            for (Eigen::Index i = 0; i < dim; ++i) atom[i] = rng.normal();
        }
        const double n = atom.norm();
        model.dict.col(a) = n > 0 ? (atom / n).eval() : Eigen::VectorXd::Unit(dim, a % dim);
    }
    model.codes = Eigen::MatrixXd::Zero(k_atoms, m);

    // The graph term 2*lambda*tr(Z L Z^T) is diagonalised once in the
    // Laplacian eigenbasis; every Z-step then solves per-column shifted
    // normal equations exactly.
    const Eigen::MatrixXd lap = graph_laplacian(w);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> lap_eig(lap);
    if (lap_eig.info() != Eigen::Success) throw NumericError("Laplacian eigendecomposition failed");
    const Eigen::MatrixXd u = lap_eig.eigenvectors();
    const Eigen::VectorXd lap_ev = lap_eig.eigenvalues().cwiseMax(0.0);

    double objective = dict_objective(model.dict, model.codes, y_columns, w, lambda).total;
    model.diagnostics.clear();
    model.half_step_objectives.push_back(objective);

    for (int iter = 0; iter < max_iters; ++iter) {
        // Z-step: exact minimisation over Z with D fixed. The exact minimiser
        // cannot increase the objective; at numerical convergence the ridge
        // term can tick it up by roundoff, in which case the old codes stand.
        {
            const Eigen::MatrixXd candidate = solve_codes(model.dict, y_columns, u, lap_ev, lambda);
            const double next = dict_objective(model.dict, candidate, y_columns, w, lambda).total;
            if (next <= objective) {
                model.codes = candidate;
                objective = next;
            }
            model.half_step_objectives.push_back(objective);
        }

        // D-step: exact per-atom least squares with unit-ball projection.
        // The per-atom subproblem is an isotropic quadratic, so clipping the
        // unconstrained optimum to the ball is the constrained optimum and
        // every atom update decreases the objective.
        double rel_change = 0.0;
        {
            const Eigen::MatrixXd dict_before = model.dict;
            Eigen::MatrixXd residual = y_columns - model.dict * model.codes;
            for (int a = 0; a < k_atoms; ++a) {
                const Eigen::RowVectorXd zrow = model.codes.row(a);
                const double zz = zrow.squaredNorm();
                if (zz < 1e-300) continue;  // dead atom, leave as is
                const Eigen::VectorXd old_atom = model.dict.col(a);
                Eigen::VectorXd atom = (residual * zrow.transpose() + old_atom * zz) / zz;
                const double n = atom.norm();
                if (n > 1.0) atom /= n;
                model.dict.col(a) = atom;
                residual += (old_atom - atom) * zrow;
            }
            const double next = dict_objective(model.dict, model.codes, y_columns, w, lambda).total;
            if (next <= objective) {
                rel_change = std::abs(objective - next) / (1.0 + std::abs(objective));
                objective = next;
            } else {
                model.dict = dict_before;  // roundoff tick at convergence
            }
            model.half_step_objectives.push_back(objective);
        }

        const DictObjective obj = dict_objective(model.dict, model.codes, y_columns, w, lambda);
        model.diagnostics.push_back(SolverDiag{iter, obj.total, obj.recon, obj.graph});

        if (rel_change < 1e-6 && iter > 0) {
            // Alternating minimisation can stall in a poor stationary point.
            // Rescue: re-seed one atom from the leading singular direction of
            // the residual without it, re-solve Z exactly, and keep the move
            // only if the objective drops.
            bool rescued = false;
            const Eigen::MatrixXd residual = y_columns - model.dict * model.codes;
            for (int a = 0; a < k_atoms && !rescued; ++a) {
                const Eigen::MatrixXd without =
                    residual + model.dict.col(a) * model.codes.row(a);
                Eigen::JacobiSVD<Eigen::MatrixXd> svd(without, Eigen::ComputeThinU);
                Eigen::MatrixXd trial_dict = model.dict;
                trial_dict.col(a) = svd.matrixU().col(0);
                const Eigen::MatrixXd trial_codes = solve_codes(trial_dict, y_columns, u, lap_ev, lambda);
                const double trial_obj =
                    dict_objective(trial_dict, trial_codes, y_columns, w, lambda).total;
                if (trial_obj < objective - 1e-9 * (1.0 + std::abs(objective))) {
                    model.dict = trial_dict;
                    model.codes = trial_codes;
                    objective = trial_obj;
                    model.half_step_objectives.push_back(objective);
                    rescued = true;
                }
            }
            if (!rescued) break;
        }
    }
    if (!std::isfinite(objective)) throw NumericError("dictionary solver objective is not finite");
    return model;
}

DictModel solve_graph_dictionary(const FeatureMatrix& features, const Eigen::MatrixXd& w, double lambda,
                                 int k_atoms, int max_iters, std::uint64_t seed) {
    return solve_graph_dictionary(features.features.transpose(), w, lambda, k_atoms, max_iters, seed);
}

Eigen::MatrixXd encode_columns(const DictModel& model, const Eigen::MatrixXd& y_columns) {
    if (y_columns.rows() != model.dict.rows()) throw ShapeError("encode: feature dimension mismatch");
    Eigen::MatrixXd gram = model.dict.transpose() * model.dict;
    gram.diagonal().array() += kRidgeEps;
    return gram.ldlt().solve(model.dict.transpose() * y_columns);
}

void write_solver_diagnostics(const std::vector<SolverDiag>& diags, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open solver diagnostics file " + path.string());
    out << "iter,objective,recon_term,graph_term\n";
    char buf[64];
    auto fmt = [&buf](double v) {
        std::snprintf(buf, sizeof(buf), "%.12g", v);
        return std::string(buf);
    };
    for (const auto& d : diags)
        out << d.iteration << "," << fmt(d.objective) << "," << fmt(d.recon) << "," << fmt(d.graph) << "\n";
}

Eigen::MatrixXd CodeFeatureExtractor::extract(const Eigen::MatrixXd& images) const {
    const Eigen::MatrixXd feats = model_.forward_features(images);
    return encode_columns(dict_, feats.transpose()).transpose();
}

void AdaptConfig::validate() const {
    if (rounds < 1) throw InvalidArgument("adapt.rounds must be >= 1");
    if (lambda < 0) throw InvalidArgument("adapt.lambda must be >= 0");
    if (knn_k < 1) throw InvalidArgument("adapt.knn_k must be >= 1");
    if (solver_iters < 1) throw InvalidArgument("adapt solver iterations must be >= 1");
    train.validate();
}

std::pair<std::vector<int>, std::vector<int>> split_views(const Dataset& ds, int anchor_camera) {
    if (ds.cameras.size() < 2)
        throw ProtocolError("unsupervised adaptation needs at least two camera views");
    int anchor = anchor_camera;
    if (anchor < 0) anchor = *ds.cameras.begin();
    if (!ds.cameras.count(anchor))
        throw InvalidArgument("anchor camera " + std::to_string(anchor) + " not present in dataset");
    std::vector<int> a_rows, b_rows;
    for (int i = 0; i < static_cast<int>(ds.records.size()); ++i) {
        if (ds.records[static_cast<std::size_t>(i)].camera_id == anchor) a_rows.push_back(i);
        else b_rows.push_back(i);
    }
    if (a_rows.empty() || b_rows.empty())
        throw ProtocolError("anchor view or matched views are empty");
    return {a_rows, b_rows};
}

long self_train_round(SiameseModel& model, const Dataset& target, const SoftLabeling& labeling,
                      const TrainConfig& cfg, long start_iteration, const LossSink& sink) {
    if (labeling.num_classes < 2)
        throw InvalidArgument("self-training needs at least 2 pseudo classes");
    const Dataset pseudo = relabel_dataset(target, labeling.labels, target.name + ":pseudo");
    return two_stepped_finetune(model, pseudo, cfg, start_iteration, sink);
}

namespace {

double label_agreement(const SoftLabeling& prev, const SoftLabeling& cur, const std::vector<std::string>& ids) {
    if (ids.empty()) return 1.0;
    int same = 0;
    for (const auto& id : ids) {
        const auto a = prev.labels.find(id);
        const auto b = cur.labels.find(id);
        if (a != prev.labels.end() && b != cur.labels.end() &&
            prev.anchor_ids[static_cast<std::size_t>(a->second)] ==
                cur.anchor_ids[static_cast<std::size_t>(b->second)])
            ++same;
    }
    return static_cast<double>(same) / static_cast<double>(ids.size());
}

CoTrainReport adapt_loop(SiameseModel& model, const Dataset& target, const AdaptConfig& cfg, bool use_dictionary,
                         const LossSink& sink) {
    cfg.validate();
    if (!target.unlabelled() && !target.labelled())
        throw InvalidArgument("adaptation target dataset is empty");
    const Dataset train_pool = subset_by_split(target, Split::train);
    const auto [a_rows, b_rows] = split_views(train_pool, cfg.anchor_camera);
    const int anchor = train_pool.records[static_cast<std::size_t>(a_rows.front())].camera_id;

    std::vector<std::string> b_ids;
    for (int r : b_rows) b_ids.push_back(train_pool.records[static_cast<std::size_t>(r)].image_id);

    CoTrainReport report;
    SoftLabeling previous;
    long iteration = 0;
    for (int round = 0; round < cfg.rounds; ++round) {
        CoTrainRound rr;
        rr.round = round;

        const FeatureMatrix feats = extract_features(model, train_pool.records);
        SoftLabeling labeling;
        if (use_dictionary) {
            // Soft labels come from code-space distances in the
            // graph-regularised subspace rather than raw feature distances.
            const Eigen::MatrixXd w = build_cross_view_graph(feats, a_rows, b_rows, cfg.knn_k);
            const int k_atoms = cfg.k_atoms > 0
                                    ? cfg.k_atoms
                                    : std::max(2, static_cast<int>(std::min<Eigen::Index>(
                                                      feats.features.cols(), feats.features.rows())) / 2);
            DictModel dict = solve_graph_dictionary(feats, w, cfg.lambda, k_atoms, cfg.solver_iters,
                                                    cfg.seed + static_cast<std::uint64_t>(round));
            rr.solver = dict.diagnostics;
            FeatureMatrix codes;
            codes.features = dict.codes.transpose();
            codes.image_ids = feats.image_ids;
            codes.extractor_id = feats.extractor_id + "+codes";
            labeling = soft_labels_from_features(codes, a_rows, b_rows, anchor);
        } else {
            labeling = soft_labels_from_features(feats, a_rows, b_rows, anchor);
        }

        rr.num_pseudo_classes = labeling.num_classes;
        rr.label_agreement = round == 0 ? 0.0 : label_agreement(previous, labeling, b_ids);
        previous = labeling;

        TrainConfig round_cfg = cfg.train;
        round_cfg.seed = cfg.train.seed + static_cast<std::uint64_t>(round) * 7919;
        iteration = self_train_round(model, train_pool, labeling, round_cfg, iteration, sink);
        report.rounds.push_back(std::move(rr));
    }
    return report;
}

}  // namespace

CoTrainReport co_train(SiameseModel& model, const Dataset& target, const AdaptConfig& cfg, const LossSink& sink) {
    return adapt_loop(model, target, cfg, /*use_dictionary=*/true, sink);
}

CoTrainReport self_train(SiameseModel& model, const Dataset& target, const AdaptConfig& cfg,
                         const LossSink& sink) {
    return adapt_loop(model, target, cfg, /*use_dictionary=*/false, sink);
}

// ---------------------------------------------------------------------------

LinearAutoencoder::LinearAutoencoder(int feature_dim, int mid_dim, std::uint64_t seed)
    : encoder_("ae.encoder", feature_dim, mid_dim), decoder_("ae.decoder", mid_dim, feature_dim) {
    if (mid_dim < 1 || feature_dim < 1) throw InvalidArgument("autoencoder dims must be >= 1");
    Rng rng(seed);
    encoder_.init(rng, std::sqrt(1.0 / feature_dim));
    decoder_.init(rng, std::sqrt(1.0 / mid_dim));
}

double LinearAutoencoder::mean_loss(const Eigen::MatrixXd& feature_rows) const {
    if (feature_rows.rows() == 0) throw InvalidArgument("autoencoder loss needs at least one feature row");
    const Eigen::MatrixXd err = reconstruct(feature_rows) - feature_rows;
    return 0.5 * err.squaredNorm() / static_cast<double>(feature_rows.rows());
}

void LinearAutoencoder::fit(const Eigen::MatrixXd& feature_rows, int iters, double lr, double momentum) {
    if (feature_rows.rows() == 0) throw InvalidArgument("autoencoder fit needs at least one feature row");
    auto groups = std::vector<ParamGroup>{encoder_.group(), decoder_.group()};
    Eigen::Index total = 0;
    for (const auto& g : groups) total += g.size();
    if (vel_.size() != total) vel_ = Eigen::VectorXd::Zero(total);

    const double inv_n = 1.0 / static_cast<double>(feature_rows.rows());
    for (int it = 0; it < iters; ++it) {
        zero_grads(groups);
        const Eigen::MatrixXd hidden = encoder_.forward(feature_rows);
        const Eigen::MatrixXd recon = decoder_.forward(hidden);
        const Eigen::MatrixXd derr = (recon - feature_rows) * inv_n;
        const Eigen::MatrixXd dhidden = decoder_.backward(hidden, derr);
        encoder_.backward(feature_rows, dhidden);

        Eigen::VectorXd grad = flatten_grads(groups);
        vel_ = momentum * vel_ - lr * grad;
        Eigen::VectorXd params = flatten_params(groups) + vel_;
        set_params(groups, params);
    }
}

LinearAutoencoder autoencoder_baseline(const SiameseModel& model, const Dataset& target, const Dataset& source,
                                       const AutoencoderConfig& cfg) {
    const int dim = model.feature_dim();
    const int mid = cfg.mid_dim > 0 ? cfg.mid_dim : dim / 2;
    LinearAutoencoder ae(dim, mid, cfg.seed);

    // The target alone is too small to train on; initialise on the source.
    const FeatureMatrix src = extract_features(model, subset_by_split(source, Split::train).records);
    ae.fit(src.features, cfg.pretrain_iters, cfg.lr);
    const FeatureMatrix tgt = extract_features(model, subset_by_split(target, Split::train).records);
    ae.fit(tgt.features, cfg.finetune_iters, cfg.lr);
    return ae;
}

// ---------------------------------------------------------------------------

double cycle_consistency_rate(const FeatureMatrix& features, const std::vector<int>& view_a_rows,
                              const std::vector<int>& view_b_rows) {
    if (view_a_rows.empty() || view_b_rows.empty())
        throw InvalidArgument("cycle consistency needs two non-empty views");
    auto nearest = [&](int row, const std::vector<int>& pool) {
        double best = std::numeric_limits<double>::infinity();
        int best_row = pool.front();
        for (int j : pool) {
            const double d = (features.features.row(row) - features.features.row(j)).squaredNorm();
            if (d < best) {
                best = d;
                best_row = j;
            }
        }
        return best_row;
    };
    int cycles = 0;
    for (int b : view_b_rows) {
        const int a = nearest(b, view_a_rows);
        if (nearest(a, view_b_rows) == b) ++cycles;
    }
    return static_cast<double>(cycles) / static_cast<double>(view_b_rows.size());
}

double select_lambda(const SiameseModel& model, const Dataset& target, const std::vector<double>& candidates,
                     std::uint64_t seed, const AdaptConfig& base_cfg) {
    if (candidates.empty()) throw InvalidArgument("select_lambda needs at least one candidate");
    std::vector<double> sorted = candidates;
    std::sort(sorted.begin(), sorted.end());
    if (sorted.size() == 1) return sorted.front();

    // Half the training data fits, the other half scores.
    const Dataset pool = subset_by_split(target, Split::train);
    Rng rng = Rng(seed).fork(seed_offset::adapt);
    std::map<int, std::vector<int>> by_camera;
    for (int i = 0; i < static_cast<int>(pool.records.size()); ++i)
        by_camera[pool.records[static_cast<std::size_t>(i)].camera_id].push_back(i);
    std::vector<int> fit_rows, holdout_rows;
    for (auto& [cam, rows] : by_camera) {
        rng.shuffle(rows);
        const std::size_t half = rows.size() / 2;
        for (std::size_t i = 0; i < rows.size(); ++i)
            (i < half ? fit_rows : holdout_rows).push_back(rows[i]);
    }
    auto build = [&](const std::vector<int>& rows, const char* tag) {
        std::vector<ImageRecord> recs;
        for (int r : rows) recs.push_back(pool.records[static_cast<std::size_t>(r)]);
        return make_dataset(pool.name + ":" + tag, std::move(recs));
    };
    const Dataset fit_ds = build(fit_rows, "cvfit");
    const Dataset holdout_ds = build(holdout_rows, "cvhold");
    const auto [hold_a, hold_b] = split_views(holdout_ds, base_cfg.anchor_camera);

    double best_score = -1.0;
    double best_lambda = sorted.front();
    for (double lambda : sorted) {
        SiameseModel trial = model.clone();
        AdaptConfig cfg = base_cfg;
        cfg.lambda = lambda;
        cfg.rounds = 1;
        co_train(trial, fit_ds, cfg);
        const FeatureMatrix feats = extract_features(trial, holdout_ds.records);
        const double score = cycle_consistency_rate(feats, hold_a, hold_b);
        if (score > best_score) {  // strict: ties keep the smaller lambda
            best_score = score;
            best_lambda = lambda;
        }
    }
    return best_lambda;
}

}  // namespace reid
