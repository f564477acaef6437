#ifndef VOXLOC_RETRIEVAL_HPP
#define VOXLOC_RETRIEVAL_HPP

#include <Eigen/Core>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace voxloc::eval {

using Eigen::VectorXd;

struct Record {
    std::string cloud_id;
    VectorXd descriptor;
    double easting = 0.0;
    double northing = 0.0;
    std::string traversal_id;
};

struct DescriptorDB {
    std::vector<Record> records;

    // all descriptors same length, cloud ids unique
    void validate() const;
    std::vector<std::string> traversal_ids() const;
};

struct EvalSplit {
    DescriptorDB queries;
    DescriptorDB database;
};

struct Neighbor {
    std::string cloud_id;
    double distance;
};

// Exact Euclidean nearest neighbours, ascending distance, ties broken by
// cloud_id; returns min(n, |db|) entries.
std::vector<Neighbor> knn(const VectorXd& query, const DescriptorDB& db, int n);

inline constexpr double kSuccessRadius = 25.0; // meters

// Percentage of queries with at least one top-n database record within
// `success_radius` meters of the query's ground-truth position.
double recall_at_n(const EvalSplit& split, int n, double success_radius = kSuccessRadius);

// n for the AR@1% metric: 1% of the database size, round half up, floor 1.
int one_percent_n(std::size_t database_size);

double average_recall_at_1pct(const EvalSplit& split, double success_radius = kSuccessRadius);

// Queries = records of `query_traversal`; database = all other records.
EvalSplit build_eval_split(const DescriptorDB& db, const std::string& query_traversal);

// Rotates the query traversal over all traversals and pools the per-query
// outcomes.
struct EvalReport {
    std::vector<std::pair<int, double>> recall_at; // (n, percentage), pooled
    double ar_at_1pct = 0.0;
    std::size_t n_queries = 0;
    std::size_t n_db = 0; // database size per rotation (mean when unbalanced)
    std::map<std::string, double> per_traversal_ar1;
};

EvalReport evaluate_rotating(const DescriptorDB& db, const std::vector<int>& recall_ns,
                             double success_radius = kSuccessRadius);

// JSON-lines persistence: one record per line with keys
// id / traversal / easting / northing / descriptor.
void save_db(const DescriptorDB& db, const std::filesystem::path& path);
DescriptorDB load_db(const std::filesystem::path& path);

} // namespace voxloc::eval

#endif
