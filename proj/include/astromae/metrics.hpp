#pragma once

#include <string>
#include <vector>

namespace astromae {

// Evaluation metrics for one run, all computed in 64-bit:
//   mse       = mean((z - zhat)^2)
//   mae       = mean(|z - zhat|)
//   bias      = mean((zhat - z) / (1 + z))
//   precision = 1.48 * median(|(zhat - z) / (1 + z)|)
//   r2        = 1 - sum((z - zhat)^2) / sum((z - mean(z))^2)
// Even-length medians average the two central order statistics.
struct MetricsReport {
    double mse = 0.0;
    double mae = 0.0;
    double bias = 0.0;
    double precision = 0.0;
    double r2 = 0.0;
    std::int64_t n = 0;
};

MetricsReport compute_metrics(const std::vector<double>& z_true, const std::vector<double>& z_pred);

// CSV with header "z_spec,z_pred" (9 significant digits) plus a JSON summary
// holding the metrics next to it at <path>.json.
void export_density_scatter(const std::vector<double>& z_true, const std::vector<double>& z_pred,
                            const std::string& path);

std::string metrics_to_json(const MetricsReport& report);

}  // namespace astromae
