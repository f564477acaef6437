#include "voxloc/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>

#include "voxloc/error.hpp"

namespace voxloc::eval {

using json = nlohmann::ordered_json;

void DescriptorDB::validate() const {
    std::set<std::string> ids;
    for (const Record& r : records) {
        if (!records.empty() && r.descriptor.size() != records.front().descriptor.size())
            raise(Errc::shape_mismatch, "descriptor db: inconsistent descriptor lengths");
        if (!ids.insert(r.cloud_id).second)
            raise(Errc::shape_mismatch, "descriptor db: duplicate cloud id " + r.cloud_id);
    }
}

std::vector<std::string> DescriptorDB::traversal_ids() const {
    std::set<std::string> seen;
    for (const Record& r : records) seen.insert(r.traversal_id);
    return {seen.begin(), seen.end()};
}

namespace {

// indices of the n nearest records, (distance, cloud_id) order
std::vector<std::size_t> knn_indices(const VectorXd& query, const DescriptorDB& db, int n) {
    if (db.records.empty()) raise(Errc::empty_database, "knn: empty database");
    if (n < 1) raise(Errc::out_of_range, "knn: n must be >= 1");

    std::vector<double> dist(db.records.size());
    for (std::size_t i = 0; i < db.records.size(); ++i) {
        if (db.records[i].descriptor.size() != query.size())
            raise(Errc::shape_mismatch, "knn: descriptor length mismatch");
        dist[i] = (db.records[i].descriptor - query).norm();
    }
    std::vector<std::size_t> order(db.records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    const auto cmp = [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return db.records[a].cloud_id < db.records[b].cloud_id;
    };
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(n), order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take),
                      order.end(), cmp);
    order.resize(take);
    return order;
}

double planar_distance(double e1, double n1, double e2, double n2) {
    return std::hypot(e1 - e2, n1 - n2);
}

} // namespace

std::vector<Neighbor> knn(const VectorXd& query, const DescriptorDB& db, int n) {
    std::vector<Neighbor> out;
    for (std::size_t i : knn_indices(query, db, n)) {
        out.push_back({db.records[i].cloud_id, (db.records[i].descriptor - query).norm()});
    }
    return out;
}

double recall_at_n(const EvalSplit& split, int n, double success_radius) {
    if (split.queries.records.empty()) raise(Errc::empty_queries, "recall: no queries");
    if (split.database.records.empty()) raise(Errc::empty_database, "recall: empty database");

    std::size_t hits = 0;
    for (const Record& q : split.queries.records) {
        for (std::size_t i : knn_indices(q.descriptor, split.database, n)) {
            const Record& r = split.database.records[i];
            if (planar_distance(q.easting, q.northing, r.easting, r.northing) <=
                success_radius) {
                ++hits;
                break;
            }
        }
    }
    return 100.0 * static_cast<double>(hits) /
           static_cast<double>(split.queries.records.size());
}

int one_percent_n(std::size_t database_size) {
    const double n = std::floor(0.01 * static_cast<double>(database_size) + 0.5);
    return std::max(1, static_cast<int>(n));
}

double average_recall_at_1pct(const EvalSplit& split, double success_radius) {
    if (split.database.records.empty()) raise(Errc::empty_database, "ar@1%: empty database");
    return recall_at_n(split, one_percent_n(split.database.records.size()), success_radius);
}

EvalSplit build_eval_split(const DescriptorDB& db, const std::string& query_traversal) {
    const auto traversals = db.traversal_ids();
    if (traversals.size() < 2)
        raise(Errc::single_traversal, "eval split: need at least 2 traversals");
    if (std::find(traversals.begin(), traversals.end(), query_traversal) == traversals.end())
        raise(Errc::unknown_traversal, "eval split: unknown traversal " + query_traversal);

    EvalSplit split;
    for (const Record& r : db.records) {
        if (r.traversal_id == query_traversal)
            split.queries.records.push_back(r);
        else
            split.database.records.push_back(r);
    }
    return split;
}

EvalReport evaluate_rotating(const DescriptorDB& db, const std::vector<int>& recall_ns,
                             double success_radius) {
    const auto traversals = db.traversal_ids();
    if (traversals.size() < 2)
        raise(Errc::single_traversal, "evaluate: need at least 2 traversals");

    EvalReport report;
    std::vector<std::size_t> hits(recall_ns.size(), 0);
    std::size_t hits_1pct = 0;
    std::size_t total_queries = 0;
    std::size_t db_size_sum = 0;

    for (const std::string& t : traversals) {
        EvalSplit split = build_eval_split(db, t);
        const std::size_t nq = split.queries.records.size();
        const std::size_t ndb = split.database.records.size();
        db_size_sum += ndb;
        total_queries += nq;

        std::size_t t_hits1 = 0;
        const int n_1pct = one_percent_n(ndb);
        for (const Record& q : split.queries.records) {
            // one ranking pass at the largest n covers every metric
            int max_n = n_1pct;
            for (int n : recall_ns) max_n = std::max(max_n, n);
            const auto order = knn_indices(q.descriptor, split.database, max_n);

            int first_hit_rank = -1;
            for (std::size_t rank = 0; rank < order.size(); ++rank) {
                const Record& r = split.database.records[order[rank]];
                if (planar_distance(q.easting, q.northing, r.easting, r.northing) <=
                    success_radius) {
                    first_hit_rank = static_cast<int>(rank) + 1;
                    break;
                }
            }
            if (first_hit_rank > 0) {
                for (std::size_t i = 0; i < recall_ns.size(); ++i)
                    if (first_hit_rank <= recall_ns[i]) ++hits[i];
                if (first_hit_rank <= n_1pct) ++hits_1pct;
                if (first_hit_rank == 1) ++t_hits1;
            }
        }
        report.per_traversal_ar1[t] =
            nq == 0 ? 0.0 : 100.0 * static_cast<double>(t_hits1) / static_cast<double>(nq);
    }

    if (total_queries == 0) raise(Errc::empty_queries, "evaluate: no queries");
    for (std::size_t i = 0; i < recall_ns.size(); ++i) {
        report.recall_at.emplace_back(recall_ns[i], 100.0 * static_cast<double>(hits[i]) /
                                                        static_cast<double>(total_queries));
    }
    report.ar_at_1pct =
        100.0 * static_cast<double>(hits_1pct) / static_cast<double>(total_queries);
    report.n_queries = total_queries;
    report.n_db = db_size_sum / traversals.size();
    return report;
}

void save_db(const DescriptorDB& db, const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) raise(Errc::io_error, "descriptor db: cannot open for writing: " + path.string());
    for (const Record& r : db.records) {
        json j;
        j["id"] = r.cloud_id;
        j["traversal"] = r.traversal_id;
        j["easting"] = r.easting;
        j["northing"] = r.northing;
        std::vector<double> d(r.descriptor.data(), r.descriptor.data() + r.descriptor.size());
        j["descriptor"] = d;
        os << j.dump() << "\n";
    }
    if (!os) raise(Errc::io_error, "descriptor db: write failed");
}

DescriptorDB load_db(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) raise(Errc::io_error, "descriptor db: cannot open: " + path.string());
    DescriptorDB db;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            raise(Errc::corrupt_file, "descriptor db: malformed line");
        }
        Record r;
        try {
            r.cloud_id = j.at("id").get<std::string>();
            r.traversal_id = j.at("traversal").get<std::string>();
            r.easting = j.at("easting").get<double>();
            r.northing = j.at("northing").get<double>();
            const auto& d = j.at("descriptor");
            r.descriptor.resize(static_cast<Eigen::Index>(d.size()));
            for (std::size_t i = 0; i < d.size(); ++i)
                r.descriptor(static_cast<Eigen::Index>(i)) = d.at(i).get<double>();
        } catch (const json::exception&) {
            raise(Errc::corrupt_file, "descriptor db: missing field");
        }
        db.records.push_back(std::move(r));
    }
    db.validate();
    return db;
}

} // namespace voxloc::eval
