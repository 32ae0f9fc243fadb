#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "testutil.hpp"
#include "vmr/corpus/corpus.hpp"
#include "vmr/corpus/format.hpp"
#include "vmr/corpus/synth.hpp"

using namespace vmr;
using vmrtest::TempDir;

namespace {

Mat f32_rounded(const Mat& m) {
    Mat out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            out(i, j) = static_cast<double>(static_cast<float>(m(i, j)));
    return out;
}

std::vector<char> file_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f.good());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("feature files round-trip bit-identically", "[format]") {
    Rng rng(31);
    VideoFeatures vf;
    vf.video_id = "v0";
    vf.duration_s = 12.5;
    vf.features = f32_rounded(gaussian_mat(3, 4, rng, 1.0));

    TempDir tmp("vmrf");
    std::string path = tmp.str() + "/v0.vmrf";
    write_features(vf, path);
    VideoFeatures back = load_features(path);
    REQUIRE(back.duration_s == 12.5);
    REQUIRE((back.features == vf.features));
}

TEST_CASE("feature loader rejects wrong magic", "[format]") {
    TempDir tmp("vmrf");
    std::string path = tmp.str() + "/bad.vmrf";
    BinWriter w;
    w.magic("XXXX");
    w.u32(1);
    w.save(path);
    REQUIRE_THROWS_AS(load_features(path), FormatError);
}

TEST_CASE("feature loader names the expected payload size on truncation", "[format]") {
    TempDir tmp("vmrf");
    std::string path = tmp.str() + "/short.vmrf";
    BinWriter w;
    w.magic("VMRF");
    w.u32(1);
    w.u32(2);  // clips
    w.u32(3);  // dims: payload should be 2*3*4 = 24 bytes
    w.f64(5.0);
    for (int i = 0; i < 5; ++i) w.f32(0.0f);  // only 20 bytes
    w.save(path);
    try {
        load_features(path);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        std::string msg = e.what();
        REQUIRE(msg.find("24 bytes expected") != std::string::npos);
        REQUIRE(msg.find("20") != std::string::npos);
    }
}

TEST_CASE("embedding files round-trip and reject size mismatches", "[format]") {
    Rng rng(32);
    EmbeddingTable t;
    t.rows = f32_rounded(gaussian_mat(7, 5, rng, 1.0));
    TempDir tmp("vmre");
    std::string path = tmp.str() + "/e.vmre";
    write_embeddings(t, path);
    EmbeddingTable back = load_embeddings(path);
    REQUIRE((back.rows == t.rows));

    BinWriter w;
    w.magic("VMRE");
    w.u32(1);
    w.u32(4);
    w.u32(4);
    w.f32(1.0f);  // 4 bytes instead of 64
    std::string bad = tmp.str() + "/bad.vmre";
    w.save(bad);
    REQUIRE_THROWS_AS(load_embeddings(bad), FormatError);
}

TEST_CASE("clip standardization follows the partition rule", "[corpus]") {
    Mat x(4, 2);
    x << 1, 10, 2, 20, 3, 30, 4, 40;

    SECTION("raw equal to target is the identity") {
        REQUIRE((standardize_clips(x, 4) == x));
    }
    SECTION("raw=4 to N=2 averages adjacent pairs") {
        Mat out = standardize_clips(x, 2);
        REQUIRE(out(0, 0) == 1.5);
        REQUIRE(out(0, 1) == 15.0);
        REQUIRE(out(1, 0) == 3.5);
        REQUIRE(out(1, 1) == 35.0);
    }
    SECTION("raw=1 to N=4 repeats the single row") {
        Mat one(1, 2);
        one << 7, 8;
        Mat out = standardize_clips(one, 4);
        for (int k = 0; k < 4; ++k) {
            REQUIRE(out(k, 0) == 7.0);
            REQUIRE(out(k, 1) == 8.0);
        }
    }
    SECTION("global mean is preserved when raw divides evenly") {
        Rng rng(33);
        Mat big = gaussian_mat(12, 5, rng, 1.0);
        Mat out = standardize_clips(big, 4);
        Eigen::RowVectorXd m_in = big.colwise().mean();
        Eigen::RowVectorXd m_out = out.colwise().mean();
        REQUIRE((m_in - m_out).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("second spans map to covering clip index spans", "[corpus]") {
    REQUIRE(span_to_clip_indices({15.0, 30.0}, 60.0, 8) == ClipSpan{2, 3});
    REQUIRE(span_to_clip_indices({0.0, 60.0}, 60.0, 8) == ClipSpan{0, 7});
    REQUIRE(span_to_clip_indices({59.9, 60.0}, 60.0, 8) == ClipSpan{7, 7});

    REQUIRE_THROWS_AS(span_to_clip_indices({-1.0, 5.0}, 60.0, 8), ValidationError);
    REQUIRE_THROWS_AS(span_to_clip_indices({5.0, 5.0}, 60.0, 8), ValidationError);
    REQUIRE_THROWS_AS(span_to_clip_indices({5.0, 61.0}, 60.0, 8), ValidationError);
}

TEST_CASE("aligned clip spans survive the seconds round-trip", "[corpus]") {
    for (double clip_len : {1.0, 1.5, 2.0, 4.5, 8.0}) {
        int n = 8;
        double duration = clip_len * n;
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                auto span = clip_span_to_seconds(ClipSpan{i, j}, duration, n);
                REQUIRE(span_to_clip_indices(span, duration, n) == ClipSpan{i, j});
            }
    }
}

namespace {

std::vector<std::pair<const VideoFeatures*, const Query*>> make_items(
    const std::vector<VideoFeatures>& vids, const std::vector<Query>& qs) {
    std::vector<std::pair<const VideoFeatures*, const Query*>> items;
    for (size_t i = 0; i < qs.size(); ++i) items.push_back({&vids[i], &qs[i]});
    return items;
}

std::pair<std::vector<VideoFeatures>, std::vector<Query>> two_item_fixture() {
    Rng rng(34);
    std::vector<VideoFeatures> vids(2);
    std::vector<Query> qs(2);
    for (int i = 0; i < 2; ++i) {
        vids[static_cast<size_t>(i)].video_id = "v" + std::to_string(i);
        vids[static_cast<size_t>(i)].duration_s = 8.0;
        vids[static_cast<size_t>(i)].features = gaussian_mat(4, 3, rng, 1.0);
        qs[static_cast<size_t>(i)].query_id = "q" + std::to_string(i);
        qs[static_cast<size_t>(i)].video_id = vids[static_cast<size_t>(i)].video_id;
        qs[static_cast<size_t>(i)].span_s = {2.0, 6.0};
        qs[static_cast<size_t>(i)].clip_span = ClipSpan{1, 2};
    }
    qs[0].tokens = {5, 6, 7};
    qs[1].tokens = {8, 9, 10, 11, 12};
    return {std::move(vids), std::move(qs)};
}

}  // namespace

TEST_CASE("collate pads, masks, and stays deterministic", "[corpus]") {
    auto [vids, qs] = two_item_fixture();
    auto items = make_items(vids, qs);

    SECTION("zero masking probability leaves tokens untouched") {
        Rng rng(1);
        Batch b = collate(items, 0.0, 50, rng);
        REQUIRE(b.size() == 2);
        REQUIRE(b.max_tokens() == 5);
        REQUIRE(b.token_ids[0] == std::vector<int>{5, 6, 7, kPadId, kPadId});
        REQUIRE(b.token_ids[1] == std::vector<int>{8, 9, 10, 11, 12});
        REQUIRE(b.token_mask[0] == BoolVec{1, 1, 1, 0, 0});
        REQUIRE(b.token_mask[1] == BoolVec{1, 1, 1, 1, 1});
        for (auto& row : b.mlm_targets)
            for (int t : row) REQUIRE(t == -1);
        REQUIRE(b.clip_spans[0] == ClipSpan{1, 2});
        REQUIRE(b.duration_s[0] == 8.0);
        REQUIRE(b.query_ids[1] == "q1");
    }

    SECTION("identical seeds produce identical batches") {
        Rng r1(77), r2(77);
        Batch a = collate(items, 0.3, 50, r1);
        Batch b = collate(items, 0.3, 50, r2);
        REQUIRE(a.token_ids == b.token_ids);
        REQUIRE(a.mlm_targets == b.mlm_targets);
        for (int i = 0; i < 2; ++i) REQUIRE((a.visual[static_cast<size_t>(i)] == b.visual[static_cast<size_t>(i)]));
    }

    SECTION("permuting items permutes batch rows and nothing else") {
        Rng r1(78), r2(78);
        Batch fwd = collate(items, 0.5, 50, r1);
        auto rev_items = items;
        std::swap(rev_items[0], rev_items[1]);
        Batch rev = collate(rev_items, 0.5, 50, r2);
        REQUIRE(fwd.token_ids[0] == rev.token_ids[1]);
        REQUIRE(fwd.token_ids[1] == rev.token_ids[0]);
        REQUIRE(fwd.mlm_targets[0] == rev.mlm_targets[1]);
        REQUIRE(fwd.mlm_targets[1] == rev.mlm_targets[0]);
        REQUIRE(fwd.query_ids[0] == rev.query_ids[1]);
    }

    SECTION("mixed clip counts are rejected") {
        auto vids2 = vids;
        Rng rng(35);
        vids2[1].features = gaussian_mat(5, 3, rng, 1.0);
        auto bad = make_items(vids2, qs);
        Rng r(1);
        REQUIRE_THROWS_AS(collate(bad, 0.0, 50, r), ValidationError);
    }
}

TEST_CASE("masking hits the 80/10/10 split at full probability", "[corpus]") {
    Rng rng(36);
    std::vector<VideoFeatures> vids(1);
    std::vector<Query> qs(1);
    vids[0].video_id = "v";
    vids[0].duration_s = 4.0;
    vids[0].features = gaussian_mat(2, 2, rng, 1.0);
    qs[0].query_id = "q";
    qs[0].video_id = "v";
    qs[0].span_s = {0.0, 4.0};
    qs[0].clip_span = ClipSpan{0, 1};
    qs[0].tokens.assign(2000, 7);

    Rng r(99);
    Batch b = collate(make_items(vids, qs), 1.0, 50, r);
    int n_mask = 0, n_rand = 0, n_keep = 0;
    for (size_t t = 0; t < 2000; ++t) {
        REQUIRE(b.mlm_targets[0][t] == 7);  // every position masked at prob 1
        int id = b.token_ids[0][t];
        if (id == kMaskId) {
            ++n_mask;
        } else if (id == 7) {
            ++n_keep;
        } else {
            REQUIRE(id >= kNumReservedIds);
            REQUIRE(id < 50);
            ++n_rand;
        }
    }
    REQUIRE(n_mask > 1500);
    REQUIRE(n_mask < 1700);
    REQUIRE(n_rand > 120);
    REQUIRE(n_rand < 280);
    REQUIRE(n_keep > 120);
    REQUIRE(n_keep < 280);
}

TEST_CASE("synthetic generation is byte-identical across reruns", "[synth]") {
    SynthSpec spec;
    spec.seed = 5;
    spec.num_train = 4;
    spec.num_test = 2;
    spec.n_clips = 8;
    spec.vocab_size = 40;
    spec.feature_dim = 12;
    spec.embed_dim = 6;
    spec.pattern_dim = 8;

    TempDir a("synth_a"), b("synth_b");
    generate_synthetic(spec, a.str());
    generate_synthetic(spec, b.str());

    namespace fs = std::filesystem;
    std::vector<std::string> rels;
    for (auto& e : fs::recursive_directory_iterator(a.path))
        if (e.is_regular_file()) rels.push_back(fs::relative(e.path(), a.path).string());
    std::sort(rels.begin(), rels.end());
    REQUIRE(rels.size() == 6 + 4);  // 6 feature files + manifest, embeddings, 2 annotation files
    for (auto& rel : rels) {
        INFO(rel);
        REQUIRE(file_bytes(a.path / rel) == file_bytes(b.path / rel));
    }
}

TEST_CASE("synthetic corpus counts and span invariants hold", "[synth]") {
    SynthSpec spec;
    spec.seed = 6;
    spec.num_train = 10;
    spec.num_test = 5;
    spec.n_clips = 8;
    spec.vocab_size = 40;
    spec.feature_dim = 12;
    spec.embed_dim = 6;
    spec.pattern_dim = 8;

    TempDir tmp("synth_c");
    generate_synthetic(spec, tmp.str());
    Corpus c = load_corpus(tmp.str(), spec.n_clips);

    REQUIRE(c.train.size() == 10);
    REQUIRE(c.test.size() == 5);
    REQUIRE(c.videos.size() == 15);
    REQUIRE(c.embeddings.vocab_size() == 40);
    REQUIRE(c.embeddings.embed_dim() == 6);

    for (const auto* split : {&c.train, &c.test}) {
        for (const Query& q : *split) {
            int w = q.clip_span.width();
            REQUIRE(w >= 2);
            REQUIRE(w <= spec.n_clips / 2);
            // annotation spans sit exactly on the clip grid
            const VideoFeatures& vf = c.video(q.video_id);
            REQUIRE(span_to_clip_indices(q.span_s, vf.duration_s, spec.n_clips) == q.clip_span);
            double L = vf.duration_s / spec.n_clips;
            REQUIRE(q.span_s.first == q.clip_span.start * L);
            REQUIRE(q.span_s.second == (q.clip_span.end + 1) * L);
        }
    }
}

TEST_CASE("a sliding matched filter recovers planted spans", "[synth]") {
    SynthSpec spec;
    spec.seed = 7;
    spec.num_train = 2;
    spec.num_test = 60;
    spec.n_clips = 16;
    spec.vocab_size = 60;
    spec.feature_dim = 24;
    spec.embed_dim = 8;
    spec.pattern_dim = 12;
    spec.noise_std = 0.1;

    TempDir tmp("synth_d");
    generate_synthetic(spec, tmp.str());
    Corpus c = load_corpus(tmp.str(), spec.n_clips);
    Mat table = synth_pattern_table(spec);

    int hits = 0;
    for (const Query& q : c.test) {
        Vec p = synth_pattern_vector(table, q.tokens);
        const Mat& f = c.video(q.video_id).features;
        double best = -1e300;
        ClipSpan best_span{0, 0};
        for (int i = 0; i < spec.n_clips; ++i) {
            for (int j = i + 1; j < std::min(spec.n_clips, i + spec.n_clips / 2); ++j) {
                double corr = 0.0;
                for (int cix = i; cix <= j; ++cix)
                    corr += f.row(cix).head(spec.pattern_dim).dot(p.transpose());
                // sqrt-width scaling: sub-spans of the planted span score
                // lower, wider super-spans dilute, the exact span peaks
                corr /= std::sqrt(static_cast<double>(j - i + 1));
                if (corr > best) {
                    best = corr;
                    best_span = ClipSpan{i, j};
                }
            }
        }
        int lo = std::max(best_span.start, q.clip_span.start);
        int hi = std::min(best_span.end, q.clip_span.end);
        int inter = std::max(0, hi - lo + 1);
        int uni = best_span.width() + q.clip_span.width() - inter;
        if (static_cast<double>(inter) / uni >= 0.7) ++hits;
    }
    double rate = static_cast<double>(hits) / static_cast<double>(c.test.size());
    INFO("matched-filter recovery rate: " << rate);
    REQUIRE(rate >= 0.9);
}

TEST_CASE("annotation loading reports precise failures", "[corpus]") {
    SynthSpec spec;
    spec.seed = 8;
    spec.num_train = 2;
    spec.num_test = 1;
    spec.n_clips = 8;
    spec.vocab_size = 40;
    spec.feature_dim = 12;
    spec.embed_dim = 6;
    spec.pattern_dim = 8;
    TempDir tmp("annot");
    generate_synthetic(spec, tmp.str());
    Corpus c = load_corpus(tmp.str(), spec.n_clips);

    SECTION("bad JSON names the file and line") {
        std::string path = tmp.str() + "/broken.jsonl";
        double dur = c.video("train_00000").duration_s;
        {
            std::ofstream f(path);
            f << R"({"query_id": "q0", "video_id": "train_00000", "duration_s": )" << dur
              << R"(, "tokens": [5], "span_s": [0.0, 2.0]})" << "\n";
            f << "{not json\n";
        }
        try {
            load_annotations(path, c.videos, 40, 8);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            std::string msg = e.what();
            REQUIRE(msg.find(path + ":2") != std::string::npos);
        }
    }

    SECTION("unknown video and reserved tokens are rejected") {
        std::string path = tmp.str() + "/bad_ref.jsonl";
        {
            std::ofstream f(path);
            f << R"({"query_id": "qx", "video_id": "nope", "duration_s": 8.0, "tokens": [5], "span_s": [0.0, 2.0]})"
              << "\n";
        }
        REQUIRE_THROWS_AS(load_annotations(path, c.videos, 40, 8), ValidationError);

        std::string path2 = tmp.str() + "/bad_tok.jsonl";
        double dur = c.video("train_00000").duration_s;
        {
            std::ofstream f(path2);
            f << R"({"query_id": "qy", "video_id": "train_00000", "duration_s": )" << dur
              << R"(, "tokens": [1], "span_s": [0.0, 2.0]})" << "\n";
        }
        REQUIRE_THROWS_AS(load_annotations(path2, c.videos, 40, 8), ValidationError);
    }
}
