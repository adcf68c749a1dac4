"""Smoke test for the panel_mdp extension module.

Build first, e.g. `pip install ./crates/py --no-build-isolation` or
`maturin develop -m crates/py/Cargo.toml`.
"""

import tempfile

import panel_mdp as pm


def main():
    spec = pm.PanelSpec(2, 3, allow_null=True, null_penalty=0.1)
    assert spec.slots == 6 and spec.null_code == 6

    items = [[0.1 * i, -0.05 * i] for i in range(8)]
    env = pm.Environment(spec, items)
    assert env.legal_actions() == list(range(7))
    env.step(4)
    env.step(spec.null_code)
    assert 4 not in env.legal_actions()
    assert env.history() == [4, 6] and env.t == 2
    assert env.panel()[1][1] == 0
    try:
        env.step(4)
    except pm.PanelMdpError:
        pass
    else:
        raise AssertionError("occupied slot accepted")

    w = pm.examination_weights(2, 3, 0.8, 0.8)
    assert abs(w[0][1] - 1.0) < 1e-12 and abs(w[1][0] - 0.64) < 1e-12

    assert pm.compute_auc([0.9, 0.1], [True, False]) == 1.0

    cfg = pm.ExperimentConfig.re_org()
    cfg.seed = 7
    cfg.train_episodes = 100
    assert "re_org" in cfg.to_toml()
    try:
        pm.ExperimentConfig.from_toml("[agent]\nnope = 1\n")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    with tempfile.TemporaryDirectory() as out:
        summary = pm.train(cfg, out)
        assert summary["episodes"] == 100
        net = pm.QNetwork.load(out)
        env = pm.Environment(cfg.panel, [[0.01 * i] * 16 for i in range(6)])
        q = net.q_values(env)
        assert len(q) == cfg.panel.slots + 1
        a = net.greedy_action(env)
        assert a in env.legal_actions()

        report = pm.evaluate(cfg, "learned", checkpoint=out, episodes=20)
        assert report["episodes"] == 20 and report["auc"] is None
        rows = pm.compare(cfg, checkpoint=out, episodes=20)
        assert [r["policy"] for r in rows] == ["learned", "row_major", "random", "oracle"]
        curves = pm.export_curves(out + "/metrics.csv", 50)
        assert len(curves) == 2

    print("panel_mdp smoke test passed")


if __name__ == "__main__":
    main()
