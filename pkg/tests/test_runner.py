"""
Tests for config parsing, domain building and experiment execution.
"""

import numpy as np
import pytest

from src.errors import ConfigError, ResolutionError
from src.models import ExperimentConfig
from src.output import read_profile_csv, read_reports
from src.runner import (
    REPORTS_FILE,
    build_grid,
    build_obstacle,
    build_outer,
    default_suite,
    execute,
    load_config,
    parse_config,
    run_batch,
    run_experiment,
    with_overrides,
)

TALENTI_CONFIG = """
# talenti on the half-disk
experiment = talenti
lambda = 0
spacing = 1/16   ; coarse grid

[output]
svg = true
"""


class TestParseConfig:
    """Test the sectioned key = value format."""

    def test_minimal(self):
        """Test defaults fill in everything but the experiment."""
        config = parse_config("experiment = polya_szego\n")
        assert config.experiment == "polya_szego"
        assert config.lambda_ == 0.0
        assert config.spacing == pytest.approx(1.0 / 32.0)
        assert config.obstacle.kind == "halfspace"
        assert config.outer is None

    def test_comments_and_fractions(self):
        """Test both comment markers and fractional values."""
        config = parse_config(TALENTI_CONFIG)
        assert config.spacing == pytest.approx(0.0625)
        assert config.svg is True

    def test_lambda_out_of_range(self):
        """Test the range violation names the key and line."""
        with pytest.raises(ConfigError) as excinfo:
            parse_config("experiment = talenti\nlambda = 1.0\n")
        assert excinfo.value.key == "lambda"
        assert excinfo.value.line == 2
        assert "lambda must lie strictly inside (-1,1)" in str(excinfo.value)

    def test_unknown_key(self):
        """Test unknown keys are rejected with their line number."""
        with pytest.raises(ConfigError) as excinfo:
            parse_config("experiment = talenti\nlambda = 0.2\ngamma = 3\n")
        assert excinfo.value.line == 3
        assert excinfo.value.key == "gamma"
        assert "unknown key 'gamma'" in str(excinfo.value)

    def test_unknown_section(self):
        """Test unknown section headers."""
        with pytest.raises(ConfigError, match="unknown section"):
            parse_config("experiment = talenti\n[solver]\n")

    def test_duplicate_key(self):
        """Test a key set twice."""
        with pytest.raises(ConfigError, match="duplicate key 'p'") as excinfo:
            parse_config("experiment = sobolev\np = 1.5\np = 1.2\n")
        assert excinfo.value.line == 3

    def test_missing_equals(self):
        """Test lines without '='."""
        with pytest.raises(ConfigError, match="key = value"):
            parse_config("experiment talenti\n")

    def test_bad_number(self):
        """Test unparseable values."""
        with pytest.raises(ConfigError) as excinfo:
            parse_config("experiment = moser\nks = 4, eight\n")
        assert excinfo.value.key == "ks"

    def test_sections(self):
        """Test obstacle, outer and run sections."""
        config = parse_config(
            "experiment = harmonic\nlambda = 0.3\n"
            "[obstacle]\nkind = ball\nradius = 0.5\n"
            "[outer]\nkind = box\nlo = -1.5, -1.5\nhi = 1.5, 1.5\n"
            "[run]\ndrift = numerical\nouter_bc = homogeneous_neumann\n"
        )
        assert config.obstacle.kind == "ball"
        assert config.obstacle.radius == 0.5
        assert config.outer.lo == [-1.5, -1.5]
        assert config.drift == "numerical"
        assert config.outer_bc == "homogeneous_neumann"

    def test_polytope_rows(self):
        """Test polytope normals given as rows."""
        config = parse_config(
            "experiment = isoperimetric\n[obstacle]\nkind = polytope\nnormals = 1, 0 | 0, 1\noffsets = 0, 0\n"
        )
        assert config.obstacle.normals == [[1.0, 0.0], [0.0, 1.0]]

    def test_shorthand(self):
        """Test 'obstacle = ball' in the experiment section."""
        config = parse_config("experiment = pde_eigen\nobstacle = ball\n")
        assert config.obstacle.kind == "ball"

    def test_sobolev_exponent(self):
        """Test the exponent range of the Sobolev experiment."""
        with pytest.raises(ConfigError, match="1 < p < n"):
            parse_config("experiment = sobolev\np = 2\nn = 2\n")

    def test_load_config(self, tmp_path):
        """Test reading from a file."""
        path = tmp_path / "talenti.cfg"
        path.write_text(TALENTI_CONFIG)
        assert load_config(path).experiment == "talenti"


class TestOverrides:
    """Test config overrides and the default suite."""

    def test_with_overrides(self):
        """Test overrides revalidate and skip None."""
        config = ExperimentConfig(experiment="talenti")
        updated = with_overrides(config, **{"lambda": 0.4, "seed": None})
        assert updated.lambda_ == 0.4
        assert updated.seed == config.seed
        with pytest.raises(ConfigError):
            with_overrides(config, **{"lambda": -1.0})

    def test_default_suite(self):
        """Test the suite covers every inequality experiment."""
        suite = default_suite(ExperimentConfig(experiment="polya_szego", **{"lambda": 0.2}))
        assert [config.experiment for config in suite] == [
            "polya_szego",
            "sobolev",
            "moser",
            "talenti",
            "bossel_daners",
        ]
        assert all(config.lambda_ == 0.2 for config in suite)
        assert suite[1].p == 1.5
        assert suite[2].spacing == pytest.approx(1.0 / 128.0)


class TestDomains:
    """Test domain construction from configs."""

    def test_default_outer_is_unit_cap(self):
        """Test the standard half-space gets the unit cap."""
        config = ExperimentConfig(experiment="talenti", **{"lambda": 0.5})
        outer = build_outer(config, build_obstacle(config))
        assert outer.kind == "cap"
        assert outer.radius == 1.0

    def test_default_outer_around_ball(self):
        """Test a ball obstacle gets a box three radii around it."""
        config = ExperimentConfig(experiment="harmonic", obstacle={"kind": "ball", "radius": 0.5})
        outer = build_outer(config, build_obstacle(config))
        assert outer.kind == "box"
        np.testing.assert_allclose(outer.lo, [-1.5, -1.5])
        np.testing.assert_allclose(outer.hi, [1.5, 1.5])

    def test_obstacle_dimension(self):
        """Test a normal of the wrong dimension."""
        config = ExperimentConfig(experiment="perimeter", obstacle={"normal": [0.0, 0.0, 1.0]})
        with pytest.raises(ConfigError):
            build_obstacle(config)

    def test_build_grid(self):
        """Test the half-disk grid from a config."""
        grid = build_grid(ExperimentConfig(experiment="perimeter", spacing=1.0 / 16.0))
        assert grid.volume == pytest.approx(np.pi / 2.0, rel=0.1)


class TestExecution:
    """Test running experiments."""

    def test_talenti_on_cap(self, out_dir):
        """Test the cap equality case passes and writes its artifacts."""
        result = run_experiment(parse_config(TALENTI_CONFIG), out_dir=out_dir)
        assert result.exit_code == 0
        names = sorted(path.name for path in result.artifacts)
        assert names == [
            "000_talenti_profiles.svg",
            "000_talenti_u_sharp.csv",
            "000_talenti_v_sharp.csv",
            REPORTS_FILE,
        ]
        reports = read_reports(out_dir / REPORTS_FILE)
        assert reports[0].params["seed"] == 0
        profile = read_profile_csv(out_dir / "000_talenti_v_sharp.csv")
        assert list(profile) == ["s", "v_sharp"]

    def test_sobolev_writes_reports(self, out_dir):
        """Test Sobolev reports with their estimate trace serialize to the report file."""
        config = ExperimentConfig(experiment="sobolev", p=1.5, fields=1, spacing=1.0 / 16.0)
        result = run_experiment(config, out_dir=out_dir)
        assert result.exit_code == 0
        (report,) = read_reports(out_dir / REPORTS_FILE)
        trace = report.metadata["estimate_trace"]
        assert all(isinstance(value, float) for value in trace["quotients"])
        assert all(isinstance(value, float) for value in trace["subcritical"])
        assert report.lhs == pytest.approx(result.reports[0].lhs)

    def test_pde_solve_against_torsion(self):
        """Test f = 1 on the half-disk is gated on the closed-form torsion function."""
        result = execute(ExperimentConfig(experiment="pde_solve", spacing=1.0 / 32.0))
        (report,) = result.reports
        assert report.lhs == pytest.approx(-report.metadata["max_error_vs_torsion"])
        assert report.tolerance == pytest.approx(2.0 / 32.0 * 0.25, rel=1e-2)
        assert report.passed

    def test_pde_solve_without_closed_form(self):
        """Test other sources fall back to the Newton decrement."""
        result = execute(ExperimentConfig(experiment="pde_solve", spacing=1.0 / 16.0, source="indicator"))
        (report,) = result.reports
        assert "max_error_vs_torsion" not in report.metadata
        assert report.lhs == pytest.approx(-report.metadata["decrement"])
        assert report.passed

    def test_pde_eigen_against_bessel_zero(self):
        """Test the half-disk eigenvalue is gated on j_{0,1}^2 and bounds the field quotients."""
        result = execute(ExperimentConfig(experiment="pde_eigen", spacing=1.0 / 32.0, fields=3))
        assert [report.experiment for report in result.reports] == ["pde_eigen", "pde_eigen_exact"]
        poincare, exact = result.reports
        assert poincare.passed
        assert poincare.lhs == pytest.approx(min(poincare.metadata["field_quotients"]))
        assert poincare.metadata["poincare_constant"] == pytest.approx(1.0 / poincare.rhs)
        assert exact.lhs == pytest.approx(-exact.metadata["relative_error_vs_exact"])
        assert exact.metadata["exact"] == pytest.approx(5.783185962946784)
        assert exact.passed

    def test_pde_eigen_strict_tolerance_fails(self):
        """Test a tolerance override below the discretization error fails the closed-form report."""
        config = ExperimentConfig(experiment="pde_eigen", spacing=1.0 / 16.0, fields=1, tolerance=1e-9)
        exact = execute(config).reports[1]
        assert not exact.passed

    def test_talenti_gap_on_lshape(self):
        """Test a non-cap outer region asks for a strictly positive gap."""
        config = ExperimentConfig(
            experiment="talenti",
            outer={
                "kind": "lshape",
                "lo": [-1.0, -1.0],
                "hi": [1.0, 1.0],
                "notch_lo": [0.0, 0.5],
                "notch_hi": [2.0, 2.0],
            },
        )
        result = execute(config)
        assert [report.experiment for report in result.reports] == ["talenti", "talenti_gap"]
        gap = result.reports[1]
        assert gap.metadata["expect_equality"] is False
        assert gap.passed

    @pytest.mark.slow
    def test_default_suite_moser_passes(self):
        """Test the Moser run of the default suite stays bounded at lambda = 0."""
        moser = default_suite(ExperimentConfig(experiment="polya_szego"))[2]
        result = execute(moser)
        assert result.reports[0].metadata["resolved_ks"] == [8, 16]
        assert result.passed

    def test_moser_resolution(self):
        """Test k > 1/(4h) refuses to run."""
        config = ExperimentConfig(experiment="moser", spacing=1.0 / 32.0, ks=[4, 8, 16])
        with pytest.raises(ResolutionError):
            execute(config)

    def test_tolerance_override(self):
        """Test a config tolerance replaces the report tolerances."""
        config = ExperimentConfig(experiment="gauge_eval", tolerance=0.5, **{"lambda": 0.3})
        result = execute(config)
        assert all(report.tolerance == 0.5 for report in result.reports)

    def test_pde_ode(self):
        """Test the radial solution matches the closed-form profile."""
        result = execute(ExperimentConfig(experiment="pde_ode", spacing=1.0 / 16.0, **{"lambda": -0.3}))
        assert result.passed
        assert set(result.tables["profile"]) == {"s", "v_sharp"}

    def test_batch_order(self, out_dir):
        """Test reports are written in config order."""
        configs = [
            ExperimentConfig(experiment="gauge_check", samples=50),
            ExperimentConfig(experiment="gauge_eval", **{"lambda": 0.5}),
            ExperimentConfig(experiment="rearrange", spacing=1.0 / 16.0),
        ]
        results = run_batch(configs, jobs=1, out_dir=out_dir)
        assert [result.config.experiment for result in results] == ["gauge_check", "gauge_eval", "rearrange"]
        reports = read_reports(out_dir / REPORTS_FILE)
        assert [report.experiment for report in reports] == ["gauge_check", "gauge_eval", "rearrange"]
        assert (out_dir / "002_rearrange_profile.csv").exists()
        assert (out_dir / "002_rearrange_distribution.csv").exists()

    def test_batch_jobs(self):
        """Test the worker count must be positive."""
        with pytest.raises(ConfigError):
            run_batch([ExperimentConfig(experiment="gauge_eval")], jobs=0)

    @pytest.mark.slow
    def test_batch_process_pool(self, out_dir):
        """Test a pooled batch returns results in order."""
        configs = [ExperimentConfig(experiment="gauge_eval", **{"lambda": value}) for value in (-0.5, 0.0, 0.5)]
        results = run_batch(configs, jobs=2, out_dir=out_dir)
        assert [result.config.lambda_ for result in results] == [-0.5, 0.0, 0.5]
        assert all(result.passed for result in results)
