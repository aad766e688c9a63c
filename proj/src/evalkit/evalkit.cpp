#include "nsdesk/evalkit/evalkit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "nsdesk/common/error.hpp"
#include "nsdesk/common/text.hpp"

namespace nsdesk::eval {

namespace {

std::uint64_t attack_stream(std::uint64_t seed, const attack::AttackSpec& s, std::size_t batch) {
    return mix_seed({seed, static_cast<std::uint64_t>(s.kind), s.steps, std::bit_cast<std::uint64_t>(s.epsilon),
                     std::bit_cast<std::uint64_t>(s.alpha()), s.random_start ? 1u : 0u, batch});
}

std::vector<std::size_t> range(std::size_t start, std::size_t count) {
    std::vector<std::size_t> v(count);
    std::iota(v.begin(), v.end(), start);
    return v;
}

std::vector<std::size_t> class_predictions(const net::Model<float>& model, const Tensor<float>& images) {
    return net::predict(model, images, kEvalBatch).cls;
}

std::string pct(std::optional<double> v) {
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * *v);
    return buf;
}

std::string num(std::optional<double> v) { return v ? text::format_double(*v) : std::string(); }

}  // namespace

std::optional<double> ModelEval::accuracy_under(attack::Kind kind) const {
    for (const auto& a : attacks) {
        if (a.spec.kind == kind) return a.accuracy;
    }
    return std::nullopt;
}

std::optional<double> ModelEval::within_group_under(attack::Kind kind) const {
    for (const auto& a : attacks) {
        if (a.spec.kind == kind) return a.within_group_error;
    }
    return std::nullopt;
}

double accuracy(std::span<const std::size_t> predicted, std::span<const std::size_t> labels) {
    if (predicted.size() != labels.size() || labels.empty()) {
        throw ShapeError("accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
    }
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

double symbolic_consistency_rate(const net::Predictions& pred, const rules::RuleBase& rules) {
    const std::size_t n = pred.cls.size();
    if (pred.attrs.size() != rules.num_attributes()) {
        throw ShapeError("consistency: " + std::to_string(pred.attrs.size()) + " attribute heads, rules have " +
                         std::to_string(rules.num_attributes()));
    }
    if (n == 0) return 0.0;
    std::size_t ok = 0;
    std::vector<std::size_t> values(pred.attrs.size());
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < values.size(); ++j) values[j] = pred.attrs[j].at(i);
        ok += rules.verify_prediction(pred.cls[i], values).consistent();
    }
    return static_cast<double>(ok) / static_cast<double>(n);
}

std::optional<double> within_group_error(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                                         const rules::RuleBase& rules) {
    if (predicted.size() != labels.size()) throw ShapeError("within_group_error: size mismatch");
    std::size_t errors = 0, inside = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (predicted[i] == labels[i]) continue;
        ++errors;
        inside += rules.same_group(labels[i], predicted[i]);
    }
    if (errors == 0) return std::nullopt;
    return static_cast<double>(inside) / static_cast<double>(errors);
}

Tensor<float> attack_dataset(const net::Model<float>& model, const sign::Dataset& data,
                             const attack::AttackSpec& spec, std::uint64_t seed) {
    spec.validate();
    auto out = Tensor<float>::uninitialized(Shape{data.size(), data.channels(), data.height(), data.width()});
    const std::size_t per = data.channels() * data.height() * data.width();
    for (std::size_t start = 0, b = 0; start < data.size(); start += kEvalBatch, ++b) {
        const auto idx = range(start, std::min(kEvalBatch, data.size() - start));
        const auto x = data.images<float>(idx);
        const std::vector<std::size_t> y(data.labels().begin() + static_cast<std::ptrdiff_t>(start),
                                         data.labels().begin() + static_cast<std::ptrdiff_t>(start + idx.size()));
        const auto adv = attack::run(model, x, y, spec, attack_stream(seed, spec, b));
        std::copy_n(adv.ptr(), idx.size() * per, out.ptr() + start * per);
    }
    return out;
}

ModelEval evaluate(const net::Model<float>& model, const sign::Dataset& data,
                   std::span<const attack::AttackSpec> attacks, const rules::RuleBase* rules, std::uint64_t seed,
                   std::string name) {
    if (data.empty()) throw ConfigError("evaluate: dataset is empty");
    ModelEval e;
    e.name = std::move(name);
    e.samples = data.size();
    e.parameters = model.parameter_count();
    e.macs_per_sample = model.macs_per_sample();
    const auto clean = data.images<float>(range(0, data.size()));
    const auto pred = net::predict(model, clean, kEvalBatch);
    e.clean_acc = accuracy(pred.cls, data.labels());
    for (std::size_t i = 0; i < data.size(); ++i) e.clean_errors += pred.cls[i] != data.label(i);
    if (rules != nullptr) {
        e.consistency_rate = symbolic_consistency_rate(pred, *rules);
        e.within_group_error = within_group_error(pred.cls, data.labels(), *rules);
    }
    for (const auto& spec : attacks) {
        const auto adv_pred = class_predictions(model, attack_dataset(model, data, spec, seed));
        AttackAccuracy a{spec, accuracy(adv_pred, data.labels()), std::nullopt};
        if (rules != nullptr) a.within_group_error = within_group_error(adv_pred, data.labels(), *rules);
        e.attacks.push_back(std::move(a));
    }
    return e;
}

std::string EvalReport::markdown() const {
    std::ostringstream o;
    o << "| Training mode | Clean Accuracy | FGSM Accuracy | PGD Accuracy | Symbolic consistency | Within-group errors |\n"
      << "|---|---|---|---|---|---|\n";
    std::vector<std::string> specs;
    for (const auto& r : rows) {
        o << "| " << r.name << " | " << pct(r.clean_acc) << " | " << pct(r.accuracy_under(attack::Kind::fgsm))
          << " | " << pct(r.accuracy_under(attack::Kind::pgd)) << " | " << pct(r.consistency_rate) << " | "
          << pct(r.within_group_error) << " |\n";
        for (const auto& a : r.attacks) {
            const std::string d = a.spec.describe();
            if (std::find(specs.begin(), specs.end(), d) == specs.end()) specs.push_back(d);
        }
    }
    if (!rows.empty()) {
        o << "\n| Training mode | Within-group errors (clean) | Within-group errors (FGSM) | Within-group errors (PGD) |\n"
          << "|---|---|---|---|\n";
        for (const auto& r : rows) {
            o << "| " << r.name << " | " << pct(r.within_group_error) << " | "
              << pct(r.within_group_under(attack::Kind::fgsm)) << " | " << pct(r.within_group_under(attack::Kind::pgd))
              << " |\n";
        }
        o << "\n" << rows.front().samples << " test samples per model. Attacks: "
          << (specs.empty() ? std::string("none") : text::join(specs, "; ")) << ".\n";
    }
    return o.str();
}

std::string EvalReport::csv() const {
    std::ostringstream o;
    o << "mode,samples,clean_acc,fgsm_acc,pgd_acc,consistency_rate,within_group_error,fgsm_within_group_error,"
         "pgd_within_group_error,clean_errors,parameters,macs_per_sample,fgsm_spec,pgd_spec\n";
    for (const auto& r : rows) {
        std::string fs, ps;
        for (const auto& a : r.attacks) {
            std::string& slot = a.spec.kind == attack::Kind::fgsm ? fs : ps;
            if (slot.empty()) slot = a.spec.describe();
        }
        o << r.name << "," << r.samples << "," << text::format_double(r.clean_acc) << ","
          << num(r.accuracy_under(attack::Kind::fgsm)) << "," << num(r.accuracy_under(attack::Kind::pgd)) << ","
          << num(r.consistency_rate) << "," << num(r.within_group_error) << ","
          << num(r.within_group_under(attack::Kind::fgsm)) << "," << num(r.within_group_under(attack::Kind::pgd))
          << "," << r.clean_errors << ","
          << r.parameters << "," << r.macs_per_sample << ",\"" << fs << "\",\"" << ps << "\"\n";
    }
    return o.str();
}

Pca2 pca2(const Tensor<double>& rows) {
    if (rows.rank() != 2) throw ShapeError("pca2: expected [N,D], got " + shape_str(rows.shape()));
    const std::size_t n = rows.dim(0), d = rows.dim(1);
    if (n < 3) throw ConfigError("pca2: need at least 3 samples, got " + std::to_string(n));
    if (d < 2) throw ConfigError("pca2: need at least 2 feature dimensions");
    using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const Eigen::Map<const RowMat> x(rows.ptr(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const RowMat centered = x.rowwise() - mu;
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("pca2: eigendecomposition failed");
    // Eigenvalues come in ascending order.
    Eigen::VectorXd a1 = eig.eigenvectors().col(static_cast<Eigen::Index>(d - 1));
    Eigen::VectorXd a2 = eig.eigenvectors().col(static_cast<Eigen::Index>(d - 2));
    // Fix the sign so the largest-magnitude loading is positive.
    for (Eigen::VectorXd* a : {&a1, &a2}) {
        Eigen::Index k = 0;
        a->cwiseAbs().maxCoeff(&k);
        if ((*a)(k) < 0.0) *a = -*a;
    }
    Pca2 p;
    p.mean.assign(mu.data(), mu.data() + d);
    p.axis1.assign(a1.data(), a1.data() + d);
    p.axis2.assign(a2.data(), a2.data() + d);
    p.variance1 = std::max(0.0, eig.eigenvalues()(static_cast<Eigen::Index>(d - 1)));
    p.variance2 = std::max(0.0, eig.eigenvalues()(static_cast<Eigen::Index>(d - 2)));
    p.total_variance = cov.trace();
    const Eigen::VectorXd px = centered * a1;
    const Eigen::VectorXd py = centered * a2;
    p.x.assign(px.data(), px.data() + n);
    p.y.assign(py.data(), py.data() + n);
    return p;
}

std::vector<ProjectionPoint> project_features(const net::Model<float>& model, const sign::Dataset& data,
                                              const std::optional<attack::AttackSpec>& spec, std::uint64_t seed,
                                              Pca2* pca) {
    if (data.size() < 3) throw ConfigError("project: need at least 3 samples, got " + std::to_string(data.size()));
    const std::size_t n = data.size();
    const std::size_t dim = model.feature_dim();
    std::vector<Tensor<float>> sets{data.images<float>(range(0, n))};
    if (spec) sets.push_back(attack_dataset(model, data, *spec, seed));
    Tensor<double> feats(Shape{n * sets.size(), dim});
    const std::size_t per = data.channels() * data.height() * data.width();
    for (std::size_t s = 0; s < sets.size(); ++s) {
        for (std::size_t start = 0; start < n; start += kEvalBatch) {
            const std::size_t b = std::min(kEvalBatch, n - start);
            auto part = Tensor<float>::uninitialized(Shape{b, data.channels(), data.height(), data.width()});
            std::copy_n(sets[s].ptr() + start * per, b * per, part.ptr());
            Graph<float> g;
            const auto f = model.features(g, model.bind(g, false), g.constant(std::move(part)), net::Mode::eval);
            for (std::size_t k = 0; k < b * dim; ++k) feats[(s * n + start) * dim + k] = f.value()[k];
        }
    }
    Pca2 p = pca2(feats);
    std::vector<ProjectionPoint> out(feats.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = {p.x[i], p.y[i], data.label(i % n), i >= n};
    }
    if (pca != nullptr) *pca = std::move(p);
    return out;
}

std::string projection_csv(const std::vector<ProjectionPoint>& points) {
    std::ostringstream o;
    o << "x,y,label,condition\n";
    for (const auto& p : points) {
        o << text::format_double(p.x) << "," << text::format_double(p.y) << "," << p.label << ","
          << (p.adversarial ? "adv" : "clean") << "\n";
    }
    return o.str();
}

}  // namespace nsdesk::eval
