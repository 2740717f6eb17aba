"""Secondary-component tests: each script produces an image from fixture inputs."""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

VIZ = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(VIZ))

import plot_curves
import plot_tsne
import render_heatmap


@pytest.fixture()
def log_csv(tmp_path):
    path = tmp_path / "train_log.csv"
    lines = ["step,game_id,avg_reward,quest_completion,epsilon,loss"]
    for step in range(0, 3000, 500):
        for game in ("game1", "game2", "game4"):
            frac = min(1.0, step / 2500 + {"game1": 0.1, "game2": 0.05, "game4": 0.0}[game])
            lines.append(f"{step},{game},{frac - 0.2:.6f},{frac:.6f},0.100000,0.010000")
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture()
def emb_csv(tmp_path):
    rng = np.random.default_rng(0)
    path = tmp_path / "embeddings.csv"
    dim = 8
    lines = ["word,game_id," + ",".join(f"h_{i+1}" for i in range(dim))]
    for game, n in (("game1", 20), ("game2", 15)):
        base = rng.standard_normal((4, dim)) * 2
        for w in range(n):
            vec = base[w % 4] + rng.standard_normal(dim) * 0.1
            lines.append(f"word{w},{game}," + ",".join(f"{v:.6f}" for v in vec))
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture()
def pgm_file(tmp_path):
    rng = np.random.default_rng(1)
    matrix = (rng.random((20, 32)) * 255).astype(np.uint8)
    path = tmp_path / "map.pgm"
    with open(path, "wb") as fh:
        fh.write(b"P5\n32 20\n255\n")
        fh.write(matrix.tobytes())
    return path


class TestPlotCurves:
    def test_writes_image(self, log_csv, tmp_path):
        out = tmp_path / "fig.png"
        assert plot_curves.main(["--csv", str(log_csv), "--metric",
                                 "quest_completion", "--out", str(out)]) == 0
        assert out.exists() and out.stat().st_size > 0

    def test_three_game_log_draws_three_lines(self, log_csv):
        series = plot_curves.read_log(str(log_csv))
        assert set(series) == {"game1", "game2", "game4"}

    def test_empty_csv_errors_without_image(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        out = tmp_path / "fig.png"
        assert plot_curves.main(["--csv", str(empty), "--out", str(out)]) == 1
        assert not out.exists()

    def test_schema_mismatch_rejected(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b,c\n1,2,3\n")
        out = tmp_path / "fig.png"
        assert plot_curves.main(["--csv", str(bad), "--out", str(out)]) == 1
        assert not out.exists()

    def test_multiple_csvs(self, log_csv, tmp_path):
        out = tmp_path / "fig.png"
        rc = plot_curves.main(["--csv", f"{log_csv},{log_csv}",
                               "--metric", "avg_reward", "--out", str(out)])
        assert rc == 0 and out.exists()


class TestPlotTsne:
    def test_writes_image(self, emb_csv, tmp_path):
        out = tmp_path / "tsne.png"
        rc = plot_tsne.main(["--csv", str(emb_csv), "--perplexity", "5",
                             "--seed", "0", "--iterations", "260", "--out", str(out)])
        assert rc == 0 and out.exists()

    def test_layout_deterministic_under_seed(self, emb_csv):
        per_game = plot_tsne.read_embeddings(str(emb_csv))
        words, vectors = per_game["game1"]
        a = plot_tsne.tsne_layout(vectors, perplexity=5, seed=3, iterations=260)
        b = plot_tsne.tsne_layout(vectors, perplexity=5, seed=3, iterations=260)
        np.testing.assert_array_equal(a, b)

    def test_duplicate_vectors_land_close(self):
        rng = np.random.default_rng(2)
        vectors = np.repeat(rng.standard_normal((6, 5)), 2, axis=0)
        coords = plot_tsne.tsne_layout(vectors, perplexity=3, seed=0, iterations=260)
        spread = np.abs(coords).max()
        for i in range(0, 12, 2):
            gap = np.linalg.norm(coords[i] - coords[i + 1])
            assert gap < 0.05 * spread

    def test_too_few_points(self, tmp_path):
        path = tmp_path / "few.csv"
        path.write_text("word,game_id,h_1\n" +
                        "\n".join(f"w{i},g,0.{i}" for i in range(4)) + "\n")
        out = tmp_path / "t.png"
        assert plot_tsne.main(["--csv", str(path), "--out", str(out)]) == 1
        assert not out.exists()


class TestRenderHeatmap:
    def test_pgm_to_image(self, pgm_file, tmp_path):
        out = tmp_path / "hm.png"
        assert render_heatmap.main(["--in", str(pgm_file), "--out", str(out)]) == 0
        assert out.exists() and out.stat().st_size > 0

    def test_csv_input(self, tmp_path):
        path = tmp_path / "map.csv"
        path.write_text("0,128,255\n64,32,16\n")
        out = tmp_path / "hm.png"
        assert render_heatmap.main(["--in", str(path), "--out", str(out)]) == 0
        assert out.exists()

    def test_constant_map_warns(self, tmp_path):
        path = tmp_path / "flat.csv"
        path.write_text("7,7\n7,7\n")
        out = tmp_path / "hm.png"
        with pytest.warns(UserWarning, match="constant"):
            render_heatmap.render_heatmap(str(path), str(out))
        assert out.exists()

    def test_malformed_input(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n10 10\n255\nshort")
        out = tmp_path / "hm.png"
        assert render_heatmap.main(["--in", str(path), "--out", str(out)]) == 1


class TestScriptInvocation:
    def test_cli_entry_points_run(self, log_csv, tmp_path):
        out = tmp_path / "fig.png"
        proc = subprocess.run(
            [sys.executable, str(VIZ / "plot_curves.py"), "--csv", str(log_csv),
             "--metric", "quest_completion", "--out", str(out)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert out.exists()
