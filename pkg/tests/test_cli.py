import json

import numpy as np
import pytest

from kernquant import KernelSet, LayerShape, SubspacePartition, VqCodebook
from kernquant.cli import main
from kernquant.container import CodebookContainer, write_container
from kernquant.evaluation import SyntheticKernelSpec, generate_synthetic_kernels
from kernquant.io import write_kernels, write_volume
from kernquant.vq import AssignmentMatrix

SHAPE = LayerShape(8, 16, 3, 6)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def last_json(text):
    return json.loads(text[text.index("{"):])


@pytest.fixture
def files(tmp_path):
    ks = generate_synthetic_kernels(SyntheticKernelSpec(rank=4, noise=0.05), SHAPE, 0)
    write_kernels(tmp_path / "k.kqz", ks)
    write_volume(tmp_path / "x.kqz", np.random.default_rng(0).standard_normal((16, 6, 6)))
    return tmp_path, ks


class TestPlan:
    def test_example(self, capsys):
        code, out, _ = run(capsys, "plan", "--shape", "512x256x3x14", "--nprime", 8, "--rho", 20, "--c", 3, "--alpha", 2)
        assert code == 0
        doc = last_json(out)
        assert (doc["K_vq"], doc["K_dl"], doc["L_dl"]) == (230, 690, 57)
        assert doc["schema"] == 1

    def test_infeasible(self, capsys):
        code, _, err = run(capsys, "plan", "--shape", "512x256x3x14", "--nprime", 8, "--rho", 20, "--c", 3, "--alpha", 3)
        assert code == 3 and "infeasible" in err

    def test_rho_one(self, capsys):
        code, _, _ = run(capsys, "plan", "--shape", "512x256x3x14", "--nprime", 8, "--rho", 1, "--c", 3, "--alpha", 2)
        assert code == 2

    def test_bad_shape_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["plan", "--shape", "512x256x4x14", "--nprime", "8", "--rho", "20", "--c", "3", "--alpha", "2"])
        assert exc.value.code == 2

    def test_writes_out(self, capsys, tmp_path):
        run(capsys, "plan", "--shape", "64x64x3x8", "--nprime", 8, "--rho", 8, "--c", 3, "--alpha", 2, "--out", tmp_path / "p.json")
        assert json.loads((tmp_path / "p.json").read_text())["K_vq"] == 72


class TestCompressEval:
    @pytest.mark.parametrize("method", ["vq", "dl"])
    def test_eval_matches_compress(self, capsys, files, method):
        d, _ = files
        code, out, _ = run(capsys, "compress", "--input", d / "k.kqz", "--method", method, "--nprime", 8, "--rho", 6,
                           "--max-iters", 5, "--init-iters", 3, "--out", d / "cb.kqc", "--report", d / "r.json")
        assert code == 0
        report = json.loads((d / "r.json").read_text())
        assert report == last_json(out)
        code, out, _ = run(capsys, "eval", "--input", d / "k.kqz", "--codebook", d / "cb.kqc")
        assert code == 0
        again = last_json(out)
        assert again["layer"] == report["layer"]
        assert again["subspaces"] == report["subspaces"]
        assert len(report["iterations"]) == 2

    def test_dl_budget_not_above_vq(self, capsys, files):
        d, _ = files
        T = {}
        for method in ("vq", "dl"):
            run(capsys, "compress", "--input", d / "k.kqz", "--method", method, "--nprime", 8, "--rho", 6,
                "--max-iters", 3, "--init-iters", 2, "--out", d / f"{method}.kqc", "--report", d / f"{method}.json")
            T[method] = json.loads((d / f"{method}.json").read_text())["costs"]["T_method"]
        assert T["dl"] <= T["vq"]

    def test_corrupt_container(self, capsys, files):
        d, _ = files
        run(capsys, "compress", "--input", d / "k.kqz", "--method", "vq", "--nprime", 8, "--rho", 6, "--out", d / "cb.kqc")
        raw = bytearray((d / "cb.kqc").read_bytes())
        raw[-1] ^= 0x01
        (d / "cb.kqc").write_bytes(bytes(raw))
        code, _, err = run(capsys, "eval", "--input", d / "k.kqz", "--codebook", d / "cb.kqc")
        assert code == 4 and "corrupt" in err

    def test_missing_input(self, capsys, tmp_path):
        code, _, _ = run(capsys, "eval", "--input", tmp_path / "nope.kqz", "--codebook", tmp_path / "nope.kqc")
        assert code == 2

    def test_compress_requires_out(self, files):
        d, _ = files
        with pytest.raises(SystemExit) as exc:
            main(["compress", "--input", str(d / "k.kqz"), "--method", "vq", "--nprime", "8", "--rho", "6"])
        assert exc.value.code == 2

    def test_infeasible_compress(self, capsys, files):
        d, _ = files
        code, _, _ = run(capsys, "compress", "--input", d / "k.kqz", "--method", "dl", "--nprime", 8, "--rho", 6,
                         "--c", 4, "--alpha", 2, "--out", d / "cb.kqc")
        assert code == 3


class TestConvcheck:
    def test_lossless(self, capsys, files):
        d, ks = files
        from kernquant import partition_kernels

        part = SubspacePartition.from_channels(16, Nprime=8)
        cbs = [VqCodebook(W.data, AssignmentMatrix(np.arange(72), 72)) for W in partition_kernels(ks, part)]
        write_container(d / "cb.kqc", CodebookContainer("vq", SHAPE, part, cbs))
        code, out, _ = run(capsys, "convcheck", "--input", d / "k.kqz", "--codebook", d / "cb.kqc", "--volume", d / "x.kqz")
        doc = last_json(out)
        assert code == 0
        assert doc["max_relative_deviation"] <= 1e-6
        assert doc["deviation_from_original_layer"] <= 1e-6
        assert doc["counters_match"]

    @pytest.mark.parametrize("method", ["vq", "dl"])
    def test_fitted_codebooks(self, capsys, files, method):
        d, _ = files
        run(capsys, "compress", "--input", d / "k.kqz", "--method", method, "--nprime", 8, "--rho", 6,
            "--max-iters", 3, "--init-iters", 2, "--out", d / "cb.kqc")
        code, out, _ = run(capsys, "convcheck", "--input", d / "k.kqz", "--codebook", d / "cb.kqc", "--volume", d / "x.kqz")
        doc = last_json(out)
        assert code == 0 and doc["ok"]
        assert doc["counters"][method]["counted"] == doc["counters"][method]["formula"]

    def test_channel_mismatch(self, capsys, files):
        d, _ = files
        run(capsys, "compress", "--input", d / "k.kqz", "--method", "vq", "--nprime", 8, "--rho", 6, "--out", d / "cb.kqc")
        write_volume(d / "bad.kqz", np.zeros((8, 6, 6)))
        code, _, _ = run(capsys, "convcheck", "--input", d / "k.kqz", "--codebook", d / "cb.kqc", "--volume", d / "bad.kqz")
        assert code == 5

    def test_kernel_mismatch(self, capsys, files):
        d, _ = files
        run(capsys, "compress", "--input", d / "k.kqz", "--method", "vq", "--nprime", 8, "--rho", 6, "--out", d / "cb.kqc")
        other = LayerShape(4, 16, 3, 6)
        write_kernels(d / "k2.kqz", KernelSet(other, np.zeros(other.kernel_extent)))
        code, _, _ = run(capsys, "eval", "--input", d / "k2.kqz", "--codebook", d / "cb.kqc")
        assert code == 5


class TestSweep:
    def config(self, d, **kw):
        doc = {"shape": "8x16x3x6", "nprime": 8, "rho_grid": [4, 8], "c": 3, "alpha": 2, "seeds": [0, 1],
               "generator": {"type": "synthetic", "rank": 4, "noise": 0.1}, "solver": {"max_iters": 5, "init_iters": 3}}
        doc.update(kw)
        path = d / "cfg.json"
        path.write_text(json.dumps(doc))
        return path

    def test_deterministic_across_threads(self, capsys, tmp_path):
        cfg = self.config(tmp_path)
        outputs = []
        for threads in (1, 8, 1):
            out = tmp_path / f"out{len(outputs)}"
            code, stdout, _ = run(capsys, "sweep", "--config", cfg, "--threads", threads, "--out", out)
            assert code == 0
            outputs.append({name: (out / name).read_bytes() for name in ("sweep.csv", "summary.csv")})
        assert outputs[0] == outputs[1] == outputs[2]
        assert "gain at equal error" in stdout

    def test_row_count(self, capsys, tmp_path):
        cfg = self.config(tmp_path, rho_grid=[8], seeds=[3])
        run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "o")
        lines = (tmp_path / "o" / "sweep.csv").read_text().splitlines()
        assert len(lines) == 1 + 2 * 2

    def test_bad_config(self, capsys, tmp_path):
        cfg = self.config(tmp_path, unknown=1)
        code, _, _ = run(capsys, "sweep", "--config", cfg, "--out", tmp_path / "o")
        assert code == 2

    def test_env_threads_default(self, monkeypatch):
        from kernquant.cli import build_parser

        monkeypatch.setenv("KERNQUANT_THREADS", "3")
        args = build_parser().parse_args(["sweep", "--config", "x.json"])
        assert args.threads == 3


def test_module_entry_point(tmp_path):
    import subprocess
    import sys

    proc = subprocess.run([sys.executable, "-m", "kernquant", "plan", "--shape", "64x64x3x8", "--nprime", "8",
                           "--rho", "8", "--c", "3", "--alpha", "2"], capture_output=True, text=True)
    assert proc.returncode == 0 and "K_vq" in proc.stdout
