import json
import os

import privfeat as pf
from privfeat import cli

from .base_test import BaseTestCase

ORACLE = "[oracle]\nd = 3\nn_pub = 120\nn_priv = 60\nmodes = 3\nprivate_modes = 0\n"


class TestCli(BaseTestCase):
    def path(self, name):
        return os.path.join(self.tmp_path, name)

    def generate(self):
        config = self.path("oracle.ini")
        with open(config, "w") as f:
            f.write(ORACLE)
        self.assertEqual(cli.main(["generate", "--config", config, "--seed", "4", "--out-dir", str(self.tmp_path)]), 0)
        return self.path("public.dpfv"), self.path("private.dpfv")

    def test_calibrate(self):
        code = cli.main(["calibrate", "--eps", "1", "--q", "0.01", "--steps", "1000"])
        self.assertEqual(code, 0)
        result = json.loads(self.capsys.readouterr().out)
        self.assertTrue(result["sigma"] > 0)
        self.assertTrue(result["eps_achieved"] <= 1.0)

    def test_calibrate_infinite(self):
        self.assertEqual(cli.main(["calibrate", "--eps", "inf", "--q", "0.1", "--steps", "10"]), 0)
        result = json.loads(self.capsys.readouterr().out)
        self.assertEqual(result["sigma"], 0.0)
        self.assertEqual(result["eps_achieved"], "inf")

    def test_calibrate_unreachable(self):
        code = cli.main(["calibrate", "--eps", "1e-9", "--q", "1", "--steps", "1000", "--grid-max", "8"])
        self.assertEqual(code, 2)
        self.assertIn("unreachable", self.capsys.readouterr().err)

    def test_generate(self):
        pub_path, priv_path = self.generate()
        pub = pf.load_features(pub_path)
        priv = pf.load_features(priv_path)
        self.assertEqual((pub.n, priv.n, pub.d), (120, 60, 3))
        self.assertTrue(pub.labeled and pub.normalized)

    def test_mge_round_trip(self):
        _, priv_path = self.generate()
        model_path, out_path = self.path("mge.json"), self.path("samples.csv")
        self.assertEqual(cli.main(["fit-mge", "--in", priv_path, "--eps", "1", "--out", model_path]), 0)
        self.assertTrue(isinstance(pf.load_record(model_path), pf.GaussianModel))
        self.assertEqual(cli.main(["sample", "--model", model_path, "--k", "25", "--out", out_path]), 0)
        self.assertEqual(pf.load_features(out_path).n, 25)

    def test_dre_round_trip(self):
        pub_path, priv_path = self.generate()
        model_path, out_path = self.path("dre.json"), self.path("samples.dpfv")
        code = cli.main([
            "train-dre", "--priv", priv_path, "--pub", pub_path, "--eps", "2",
            "--iters", "5", "--batch", "8", "--width", "4", "--out", model_path,
        ])
        self.assertEqual(code, 0)
        disc = pf.load_record(model_path)
        self.assertEqual(disc.steps, 5)
        self.assertTrue(disc.eps <= 2.0)

        self.assertEqual(cli.main(["sample", "--model", model_path, "--k", "30", "--out", out_path]), 2)
        code = cli.main(["sample", "--model", model_path, "--pub", pub_path, "--k", "30", "--out", out_path])
        self.assertEqual(code, 0)
        self.assertTrue(pf.load_features(out_path).labeled)

    def test_gan_round_trip(self):
        pub_path, priv_path = self.generate()
        model_path, out_path = self.path("gan.json"), self.path("samples.dpfv")
        code = cli.main([
            "train-gan", "--priv", priv_path, "--pretrain-pub", pub_path, "--eps", "3",
            "--iters", "2", "--batch", "8", "--zdim", "2", "--width", "4", "--out", model_path,
        ])
        self.assertEqual(code, 0)
        gan = pf.load_record(model_path, pf.LatentGan)
        self.assertTrue(gan.pretrained)
        self.assertEqual(gan.critic_rounds, 10)
        self.assertEqual(cli.main(["sample", "--model", model_path, "--k", "12", "--out", out_path]), 0)
        self.assertEqual(pf.load_features(out_path).d, 3)

    def test_gan_standard_penalty_alias(self):
        _, priv_path = self.generate()
        models = []
        for style in ("standard", "interpolated"):
            model_path = self.path(style + ".json")
            code = cli.main([
                "train-gan", "--priv", priv_path, "--eps", "inf", "--gp-style", style,
                "--iters", "2", "--batch", "8", "--zdim", "2", "--width", "4", "--out", model_path,
            ])
            self.assertEqual(code, 0)
            models.append(pf.load_record(model_path, pf.LatentGan))
        self.assertEqual(models[0], models[1])

    def test_evaluate(self):
        pub_path, priv_path = self.generate()
        out = self.path("metrics.json")
        self.assertEqual(cli.main(["evaluate", "--real", priv_path, "--fake", pub_path, "--metric", "fid", "--out", out]), 0)
        report = pf.load_record(out, pf.MetricsReport)
        self.assertTrue(report.fid > 0)
        self.assertIsNone(report.precision)

    def test_experiment_exit_codes(self):
        config = self.path("grid.ini")
        with open(config, "w") as f:
            f.write(ORACLE + "[privacy]\nepsilons = inf\n[run]\nmethods = dp-mge, uniform-public\nseeds = 0\nn_eval = 20\n")
            f.write("[metrics]\nprd_clusters = 2\nndb_clusters = 3\n")
        out_dir = self.path("grid")
        self.assertEqual(cli.main(["experiment", "--config", config, "--out", out_dir]), 0)
        self.assertTrue(os.path.exists(os.path.join(out_dir, "results.csv")))

        with open(config, "a") as f:
            f.write("[dre]\nsteps = 5\n")
        with open(config) as f:
            text = f.read().replace("epsilons = inf", "epsilons = 1e-9").replace("dp-mge, uniform-public", "dp-dre")
        with open(config, "w") as f:
            f.write(text)
        self.assertEqual(cli.main(["experiment", "--config", config, "--out", out_dir]), 1)

    def test_bad_inputs(self):
        self.assertEqual(cli.main(["fit-mge", "--in", self.path("absent.csv"), "--eps", "1", "--out", self.path("m.json")]), 2)
        config = self.path("bad.ini")
        with open(config, "w") as f:
            f.write("[oracle]\nwidth = 3\n")
        self.assertEqual(cli.main(["generate", "--config", config, "--out-dir", str(self.tmp_path)]), 2)
        self.assertIn("unknown key", self.capsys.readouterr().err)
