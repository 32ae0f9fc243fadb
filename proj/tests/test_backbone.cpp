#include <catch2/catch_amalgamated.hpp>

#include "testutil.hpp"
#include "vmr/model/backbone.hpp"
#include "vmr/model/embed.hpp"

using namespace vmr;
using vmrtest::grad_check;

TEST_CASE("input embedding produces the contracted shapes", "[embed]") {
    Rng rng(41);
    ParamSet ps;
    EmbedParams e = make_embed(ps, 16, 10, 6, 40, 20, rng);
    EmbeddingTable table;
    table.rows = gaussian_mat(30, 6, rng, 1.0);

    Tape t(false);
    Node* v = embed_visual(t, e, gaussian_mat(32, 10, rng, 1.0));
    REQUIRE(v->val.rows() == 32);
    REQUIRE(v->val.cols() == 16);
    std::vector<int> ids(12, 5);
    Node* txt = embed_text(t, e, table, ids);
    REQUIRE(txt->val.rows() == 12);
    REQUIRE(txt->val.cols() == 16);

    REQUIRE_THROWS_AS(embed_visual(t, e, gaussian_mat(41, 10, rng, 1.0)), ValidationError);
    std::vector<int> long_ids(21, 5);
    REQUIRE_THROWS_AS(embed_text(t, e, table, long_ids), ValidationError);
    std::vector<int> bad_ids{30};
    REQUIRE_THROWS_AS(embed_text(t, e, table, bad_ids), ValidationError);
}

TEST_CASE("zero inputs pass only positional and modality rows through", "[embed]") {
    Rng rng(42);
    ParamSet ps;
    EmbedParams e = make_embed(ps, 8, 5, 4, 10, 10, rng);
    EmbeddingTable table;
    table.rows = Mat::Zero(20, 4);

    Tape t(false);
    Node* v = embed_visual(t, e, Mat::Zero(6, 5));
    Node* txt = embed_text(t, e, table, {3, 4, 5});
    for (Eigen::Index r = 0; r < 6; ++r) {
        Eigen::RowVectorXd want = e.pos_v->value.row(r) + e.mod_v->value.row(0);
        REQUIRE((v->val.row(r) - want).cwiseAbs().maxCoeff() < 1e-15);
    }
    for (Eigen::Index r = 0; r < 3; ++r) {
        Eigen::RowVectorXd want = e.pos_t->value.row(r) + e.mod_t->value.row(0);
        REQUIRE((txt->val.row(r) - want).cwiseAbs().maxCoeff() < 1e-15);
    }
}

namespace {

struct TinyStack {
    ParamSet ps;
    EmbedParams embed;
    BackboneParams bb;
    EmbeddingTable table;
    int d, heads;

    TinyStack(int d_, int heads_, int n_blocks, int stride, uint64_t seed, int d_in = 5,
              int d_e = 4, int vocab = 12)
        : d(d_), heads(heads_) {
        Rng rng(seed);
        embed = make_embed(ps, d, d_in, d_e, 16, 12, rng);
        bb = make_backbone(ps, n_blocks, stride, true, d, 4 * d, rng);
        table.rows = gaussian_mat(vocab, d_e, rng, 1.0);
    }
};

}  // namespace

TEST_CASE("asymmetric block returns the visual stream untouched", "[backbone]") {
    Rng rng(43);
    ParamSet ps;
    AcbParams acb = make_acb(ps, "a", 8, 32, rng);
    Tape t(false);
    Node* v = t.input(gaussian_mat(5, 8, rng, 1.0));
    Node* txt = t.input(gaussian_mat(3, 8, rng, 1.0));
    BoolVec vv(5, 1), tv(3, 1);
    StreamPair out = acb_forward(t, acb, {v, txt}, vv, tv, 2, 0.0, nullptr);
    REQUIRE(out.visual == v);  // same node, not merely equal values
    REQUIRE(out.text->val.rows() == 3);
    REQUIRE(out.text->val.cols() == 8);
    REQUIRE((out.text->val != txt->val));
}

TEST_CASE("single-head attention matches a hand-computed oracle", "[backbone]") {
    // d=2, one query, two keys, identity projections: out = softmax(q K^T / sqrt(2)) V
    ParamSet ps;
    MhaParams p;
    p.wq = ps.add("wq", 2, 2);
    p.bq = ps.add("bq", 1, 2);
    p.wk = ps.add("wk", 2, 2);
    p.bk = ps.add("bk", 1, 2);
    p.wv = ps.add("wv", 2, 2);
    p.bv = ps.add("bv", 1, 2);
    p.wo = ps.add("wo", 2, 2);
    p.bo = ps.add("bo", 1, 2);
    p.wq->value << 1, 0, 0, 1;
    p.wk->value << 1, 0, 0, 1;
    p.wv->value << 1, 0, 0, 1;
    p.wo->value << 1, 0, 0, 1;

    Mat q(1, 2);
    q << 1.0, 0.0;
    Mat kv(2, 2);
    kv << 1.0, 0.0, 0.0, 1.0;

    Tape t(false);
    Node* out = attention_forward(t, p, t.input(q), t.input(kv), BoolVec{1, 1}, 1);

    double s0 = 1.0 / std::sqrt(2.0);  // q . k0 / sqrt(dh)
    double s1 = 0.0;
    double e0 = std::exp(s0), e1 = std::exp(s1);
    double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    // V rows are [1,0] and [0,1], so the output is the probability vector
    REQUIRE(std::abs(out->val(0, 0) - p0) < 1e-12);
    REQUIRE(std::abs(out->val(0, 1) - p1) < 1e-12);
}

TEST_CASE("joint block preserves shapes and isolates masked keys", "[backbone]") {
    Rng rng(44);
    ParamSet ps;
    CabParams cab = make_cab(ps, "c", 8, 32, rng);
    Mat vmat = gaussian_mat(3, 8, rng, 1.0);
    Mat tmat = gaussian_mat(2, 8, rng, 1.0);
    BoolVec vv{1, 0, 1}, tv{1, 1};

    auto run = [&](const Mat& vm) {
        Tape t(false);
        StreamPair out = cab_forward(t, cab, {t.input(vm), t.input(tmat)}, vv, tv, 2, 0.0, nullptr);
        return std::pair<Mat, Mat>{out.visual->val, out.text->val};
    };
    auto [v_base, t_base] = run(vmat);
    REQUIRE(v_base.rows() == 3);
    REQUIRE(v_base.cols() == 8);
    REQUIRE(t_base.rows() == 2);
    REQUIRE(t_base.cols() == 8);

    Mat vpert = vmat;
    vpert.row(1).array() += 10.0;  // masked position
    auto [v_pert, t_pert] = run(vpert);
    REQUIRE((v_base.row(0) - v_pert.row(0)).cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE((v_base.row(2) - v_pert.row(2)).cwiseAbs().maxCoeff() < 1e-9);
    REQUIRE((t_base - t_pert).cwiseAbs().maxCoeff() < 1e-9);
    // the masked position itself still changes (it is a residual query)
    REQUIRE((v_base.row(1) - v_pert.row(1)).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("a lone valid text token attends to every unmasked visual position", "[backbone]") {
    Rng rng(45);
    ParamSet ps;
    CabParams cab = make_cab(ps, "c", 8, 32, rng);
    Param* vis = ps.add_gaussian("vis", 4, 8, rng, 1.0);
    Mat tmat = gaussian_mat(3, 8, rng, 1.0);
    BoolVec vv{1, 1, 0, 1}, tv{0, 1, 0};

    Tape t;
    StreamPair out = cab_forward(t, cab, {t.use(*vis), t.input(tmat)}, vv, tv, 2, 0.0, nullptr);
    Node* loss = t.sum_all(t.slice_rows(out.text, 1, 1));
    vis->zero_grad();
    t.backward(loss);

    REQUIRE(vis->grad.row(0).cwiseAbs().maxCoeff() > 0.0);
    REQUIRE(vis->grad.row(1).cwiseAbs().maxCoeff() > 0.0);
    REQUIRE(vis->grad.row(3).cwiseAbs().maxCoeff() > 0.0);
    REQUIRE(vis->grad.row(2).cwiseAbs().maxCoeff() == 0.0);  // masked key reaches nothing
}

TEST_CASE("joint attention is equivariant to visual permutation without positions", "[backbone]") {
    Rng rng(46);
    ParamSet ps;
    CabParams cab = make_cab(ps, "c", 8, 32, rng);
    Mat vmat = gaussian_mat(4, 8, rng, 1.0);
    Mat tmat = gaussian_mat(2, 8, rng, 1.0);
    BoolVec vv{1, 1, 0, 1}, tv{1, 1};
    std::vector<int> perm{2, 0, 3, 1};  // new row k comes from old row perm[k]

    Mat vperm(4, 8);
    BoolVec vvperm(4);
    for (int k = 0; k < 4; ++k) {
        vperm.row(k) = vmat.row(perm[static_cast<size_t>(k)]);
        vvperm[static_cast<size_t>(k)] = vv[static_cast<size_t>(perm[static_cast<size_t>(k)])];
    }

    Tape t1(false), t2(false);
    StreamPair a = cab_forward(t1, cab, {t1.input(vmat), t1.input(tmat)}, vv, tv, 2, 0.0, nullptr);
    StreamPair b =
        cab_forward(t2, cab, {t2.input(vperm), t2.input(tmat)}, vvperm, tv, 2, 0.0, nullptr);

    for (int k = 0; k < 4; ++k)
        REQUIRE((b.visual->val.row(k) - a.visual->val.row(perm[static_cast<size_t>(k)]))
                    .cwiseAbs()
                    .maxCoeff() < 1e-12);
    REQUIRE((b.text->val - a.text->val).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("stack instantiates stride-many co-attention layers per block", "[backbone]") {
    Rng rng(47);
    ParamSet ps;
    BackboneParams b = make_backbone(ps, 3, 2, true, 8, 32, rng);
    REQUIRE(b.acbs.size() == 6);
    REQUIRE(b.cabs.size() == 3);
    REQUIRE(ps.find("backbone.block2.acb1.ffn.w1") != nullptr);
    REQUIRE(ps.find("backbone.block2.cab.attn.wq") != nullptr);
    REQUIRE(ps.find("backbone.block0.acb2.ffn.w1") == nullptr);

    ParamSet ps2;
    BackboneParams b2 = make_backbone(ps2, 1, 1, true, 8, 32, rng);
    REQUIRE(b2.acbs.size() == 1);
    REQUIRE(b2.cabs.size() == 1);

    ParamSet ps3;
    BackboneParams b3 = make_backbone(ps3, 2, 2, false, 8, 32, rng);
    REQUIRE(b3.acbs.empty());
    REQUIRE(b3.cabs.size() == 2);
}

TEST_CASE("the full stack is deterministic with dropout off", "[backbone]") {
    TinyStack s(8, 2, 2, 2, 48);
    Rng frng(49);
    Mat vfeat = gaussian_mat(6, 5, frng, 1.0);
    std::vector<int> ids{3, 4, 5, kPadId};
    BoolVec vv(6, 1), tv{1, 1, 1, 0};

    auto run = [&]() {
        Tape t(false);
        StreamPair in{embed_visual(t, s.embed, vfeat), embed_text(t, s.embed, s.table, ids)};
        StreamPair out = backbone_forward(t, s.bb, in, vv, tv, s.heads, 0.0, nullptr);
        return std::pair<Mat, Mat>{out.visual->val, out.text->val};
    };
    auto [v1, t1] = run();
    auto [v2, t2] = run();
    REQUIRE((v1 == v2));
    REQUIRE((t1 == t2));
}

TEST_CASE("masked positions never leak into unmasked outputs", "[backbone]") {
    TinyStack s(8, 2, 2, 1, 50);
    Rng rng(51);
    Mat vfeat = gaussian_mat(5, 5, rng, 1.0);
    std::vector<int> ids{3, 4, 5, kPadId, kPadId};
    BoolVec vv{1, 1, 1, 0, 1};
    BoolVec tv{1, 1, 1, 0, 0};

    auto run = [&](const Mat& vm, const EmbeddingTable& tbl) {
        Tape t(false);
        StreamPair in{embed_visual(t, s.embed, vm), embed_text(t, s.embed, tbl, ids)};
        StreamPair out = backbone_forward(t, s.bb, in, vv, tv, s.heads, 0.0, nullptr);
        return std::pair<Mat, Mat>{out.visual->val, out.text->val};
    };
    auto [v_base, t_base] = run(vfeat, s.table);

    SECTION("perturbing a masked visual row") {
        Mat vpert = vfeat;
        vpert.row(3).array() += 100.0;
        auto [v_p, t_p] = run(vpert, s.table);
        for (int r : {0, 1, 2, 4})
            REQUIRE((v_base.row(r) - v_p.row(r)).cwiseAbs().maxCoeff() < 1e-6);
        for (int r : {0, 1, 2})
            REQUIRE((t_base.row(r) - t_p.row(r)).cwiseAbs().maxCoeff() < 1e-6);
    }

    SECTION("perturbing the PAD token embedding") {
        EmbeddingTable tbl = s.table;
        tbl.rows.row(kPadId).array() += 100.0;
        auto [v_p, t_p] = run(vfeat, tbl);
        for (int r : {0, 1, 2, 4})
            REQUIRE((v_base.row(r) - v_p.row(r)).cwiseAbs().maxCoeff() < 1e-6);
        for (int r : {0, 1, 2})
            REQUIRE((t_base.row(r) - t_p.row(r)).cwiseAbs().maxCoeff() < 1e-6);
        // the padded rows themselves do move, proving the perturbation was live
        REQUIRE((t_base.row(3) - t_p.row(3)).cwiseAbs().maxCoeff() > 1e-3);
    }
}

TEST_CASE("masked-token loss matches closed forms", "[mlm]") {
    SECTION("no masked positions yields an empty loss") {
        Rng rng(52);
        ParamSet ps;
        MlmHead head = make_mlm_head(ps, 10, 4, rng);
        Tape t;
        Node* latents = t.input(gaussian_mat(3, 4, rng, 1.0));
        MlmItemLoss l = mlm_item_loss(t, head, latents, {-1, -1, -1});
        REQUIRE(l.count == 0);
        REQUIRE(l.sum == nullptr);
    }

    SECTION("uniform logits over vocab 50 cost ln 50") {
        ParamSet ps;
        Rng rng(53);
        MlmHead head;
        head.w = ps.add("mlm_head.w", 50, 4);  // zero weights -> logits all zero
        head.b = ps.add("mlm_head.b", 1, 50);
        Tape t;
        Node* latents = t.input(gaussian_mat(3, 4, rng, 1.0));
        MlmItemLoss l = mlm_item_loss(t, head, latents, {-1, 7, -1});
        REQUIRE(l.count == 1);
        REQUIRE(std::abs(l.sum->val(0, 0) - std::log(50.0)) < 1e-12);
    }

    SECTION("two masked tokens average two hand-computed cross entropies") {
        ParamSet ps;
        MlmHead head;
        head.w = ps.add("mlm_head.w", 3, 2);
        head.b = ps.add("mlm_head.b", 1, 3);
        head.w->value << 1.0, 0.0, 0.0, 1.0, 0.5, 0.5;
        Tape t;
        Mat latents(2, 2);
        latents << 2.0, 0.0, 0.0, 1.0;
        // logits row0 = [2, 0, 1], row1 = [0, 1, 0.5]
        MlmItemLoss l = mlm_item_loss(t, head, t.input(latents), {0, 2});
        auto ce = [](std::initializer_list<double> logits, int target) {
            double mx = std::max(logits);
            double lse = 0.0;
            for (double z : logits) lse += std::exp(z - mx);
            lse = mx + std::log(lse);
            return lse - *(logits.begin() + target);
        };
        double want = ce({2.0, 0.0, 1.0}, 0) + ce({0.0, 1.0, 0.5}, 2);
        REQUIRE(l.count == 2);
        REQUIRE(std::abs(l.sum->val(0, 0) - want) < 1e-12);
    }

    SECTION("targets outside the vocab are rejected") {
        Rng rng(54);
        ParamSet ps;
        MlmHead head = make_mlm_head(ps, 10, 4, rng);
        Tape t;
        Node* latents = t.input(gaussian_mat(2, 4, rng, 1.0));
        REQUIRE_THROWS_AS(mlm_item_loss(t, head, latents, {10, -1}), ValidationError);
    }
}

TEST_CASE("masked-token loss gradients survive the full stack", "[mlm]") {
    TinyStack s(8, 2, 1, 1, 55, 4, 3, 10);
    Rng rng(56);
    ParamSet head_ps;
    MlmHead head = make_mlm_head(head_ps, 10, 8, rng);
    Mat vfeat = gaussian_mat(4, 4, rng, 1.0);
    std::vector<int> ids{3, kMaskId, 5, kMaskId};
    std::vector<int> targets{-1, 6, -1, 9};
    BoolVec vv(4, 1), tv(4, 1);

    std::vector<Param*> params = s.ps.all();
    std::vector<Param*> hp = head_ps.all();
    params.insert(params.end(), hp.begin(), hp.end());

    auto eval = [&](bool with_grad) {
        Tape t(with_grad);
        StreamPair in{embed_visual(t, s.embed, vfeat), embed_text(t, s.embed, s.table, ids)};
        StreamPair out = backbone_forward(t, s.bb, in, vv, tv, s.heads, 0.0, nullptr);
        MlmItemLoss l = mlm_item_loss(t, head, out.text, targets);
        Node* loss = t.scale(l.sum, 1.0 / l.count);
        if (with_grad) t.backward(loss);
        return loss->val(0, 0);
    };
    auto res = grad_check(params, eval);
    INFO(res.worst);
    REQUIRE(res.max_rel < 1e-3);
}

TEST_CASE("closed-form parameter counts match the live registry", "[backbone]") {
    auto count_prefix = [](const ParamSet& ps, const std::string& prefix) {
        int64_t n = 0;
        for (Param* p : ps.all())
            if (p->name.rfind(prefix, 0) == 0) n += p->count();
        return n;
    };

    struct Case {
        int d, h, n_blocks, stride;
        bool use_acb;
    };
    for (Case c : {Case{8, 32, 1, 1, true}, Case{16, 64, 3, 2, true}, Case{8, 32, 2, 2, false},
                   Case{12, 48, 2, 3, true}}) {
        Rng rng(57);
        ParamSet ps;
        make_embed(ps, c.d, 5, 4, 10, 8, rng);
        make_backbone(ps, c.n_blocks, c.stride, c.use_acb, c.d, c.h, rng);
        make_mlm_head(ps, 20, c.d, rng);
        INFO("d=" << c.d << " blocks=" << c.n_blocks << " stride=" << c.stride);
        REQUIRE(count_prefix(ps, "embed.") == embed_param_count(c.d, 5, 4, 10, 8));
        REQUIRE(count_prefix(ps, "backbone.") ==
                backbone_param_count(c.n_blocks, c.stride, c.use_acb, c.d, c.h));
        REQUIRE(count_prefix(ps, "mlm_head.") == 20LL * c.d + 20);
    }
}
