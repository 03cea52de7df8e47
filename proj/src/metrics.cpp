#include "astromae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "astromae/error.hpp"
#include "json.hpp"

namespace astromae {

MetricsReport compute_metrics(const std::vector<double>& z_true, const std::vector<double>& z_pred) {
    if (z_true.size() != z_pred.size()) {
        throw ShapeError("compute_metrics: length mismatch " + std::to_string(z_true.size()) +
                         " vs " + std::to_string(z_pred.size()));
    }
    const std::size_t n = z_true.size();
    if (n < 2) throw ShapeError("compute_metrics: need at least 2 samples");

    double sum_sq = 0.0, sum_abs = 0.0, sum_scaled = 0.0, sum_z = 0.0;
    std::vector<double> abs_scaled(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = z_true[i] - z_pred[i];
        sum_sq += d * d;
        sum_abs += std::abs(d);
        const double scaled = (z_pred[i] - z_true[i]) / (1.0 + z_true[i]);
        sum_scaled += scaled;
        abs_scaled[i] = std::abs(scaled);
        sum_z += z_true[i];
    }
    const double mean_z = sum_z / double(n);
    double ss_tot = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double c = z_true[i] - mean_z;
        ss_tot += c * c;
    }
    if (ss_tot == 0.0) {
        throw DegenerateDataError("compute_metrics: constant z_true, R^2 denominator is zero");
    }

    std::sort(abs_scaled.begin(), abs_scaled.end());
    const double median = (n % 2 == 1)
                              ? abs_scaled[n / 2]
                              : 0.5 * (abs_scaled[n / 2 - 1] + abs_scaled[n / 2]);

    MetricsReport r;
    r.n = static_cast<std::int64_t>(n);
    r.mse = sum_sq / double(n);
    r.mae = sum_abs / double(n);
    r.bias = sum_scaled / double(n);
    r.precision = 1.48 * median;
    r.r2 = 1.0 - sum_sq / ss_tot;
    return r;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::json j;
    j["mse"] = report.mse;
    j["mae"] = report.mae;
    j["bias"] = report.bias;
    j["precision"] = report.precision;
    j["r2"] = report.r2;
    j["n"] = report.n;
    return j.dump(2);
}

void export_density_scatter(const std::vector<double>& z_true, const std::vector<double>& z_pred,
                            const std::string& path) {
    std::ofstream csv(path);
    if (!csv) throw DataError("cannot open '" + path + "' for writing");
    csv << "z_spec,z_pred\n";
    char buf[64];
    for (std::size_t i = 0; i < z_true.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g\n", z_true[i], z_pred[i]);
        csv << buf;
    }
    csv.close();

    std::ofstream js(path + ".json");
    if (!js) throw DataError("cannot open '" + path + ".json' for writing");
    js << metrics_to_json(compute_metrics(z_true, z_pred)) << "\n";
}

}  // namespace astromae
