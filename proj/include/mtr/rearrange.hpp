#pragma once

#include "mtr/functions.hpp"
#include "mtr/manifest.hpp"
#include "mtr/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mtr {

struct RearrangeOptions {
    bool preserve_melody = false;
    bool sample_melody_posterior = false;
    double alpha = 0.2;
    std::uint64_t seed = 0;
};

// Latents captured along the pipeline so tests can verify the composition
// stage by stage.
struct RearrangeTrace {
    Eigen::VectorXd z_mix;
    std::vector<Eigen::VectorXd> z_queries;
    std::vector<Eigen::VectorXd> z_tracks;
};

// Rearrange `source` under the reference's track system: encode the source
// mixture, encode the reference's track functions, separate, decode each
// track with the reference's instruments.
Segment rearrange(const Segment& source, const Segment& reference, MultiTrackVae& model,
                  const RearrangeOptions& opts = {}, RearrangeTrace* trace = nullptr);

// Piano-to-multitrack rearrangement with the source melody added as an
// extra query so the theme survives; the melody track may use posterior
// sampling for improvisation.
Segment orchestrate(const Segment& source, const Segment& reference, MultiTrackVae& model,
                    const RearrangeOptions& opts, RearrangeTrace* trace = nullptr);

// Indexed reference collection with precomputed track functions.
class ReferenceDB {
public:
    struct Entry {
        Segment segment;
        TrackFunction mixture_fn;
        std::vector<TrackFunction> track_fns;
        std::string piece_id;
        int seg_index = 0;
    };

    static ReferenceDB build(const std::vector<LoadedSegment>& segments);
    void save(const std::string& dir, const InstrumentTable& table) const;
    static ReferenceDB load(const std::string& dir, const InstrumentTable& table);

    bool empty() const { return entries_.empty(); }
    size_t size() const { return entries_.size(); }
    const Entry& at(size_t i) const { return entries_.at(i); }
    const std::vector<Entry>& entries() const { return entries_; }

    // piece ids in first-seen order with their entry indices (sorted by window)
    std::vector<std::pair<std::string, std::vector<size_t>>> pieces() const;

private:
    std::vector<Entry> entries_;
};

// Eq.-style heuristic retrieval: argmax of mixture-function cosine plus
// alpha-scaled standard-normal noise (one draw per entry per query); at
// alpha = 0 ties break to the lowest index.
size_t search_reference(const Segment& source, const ReferenceDB& db, double alpha,
                        Rng& rng);

// Pick one reference piece for a whole source (mean aligned-window cosine
// plus noise) from candidates at least as long as the source.
std::string search_reference_piece(const Piece& source, const ReferenceDB& db,
                                   double alpha, Rng& rng);

// 2-bar-wise long-form rearrangement against a fixed reference piece.
// Throws std::invalid_argument when the reference is shorter than the
// source.
Piece rearrange_piece(const Piece& source, const Piece& reference, MultiTrackVae& model,
                      const RearrangeOptions& opts, bool melody_queries);

// Assemble a reference piece's segments from the db (time-aligned windows).
Piece reference_piece_from_db(const ReferenceDB& db, const std::string& piece_id);

}  // namespace mtr
