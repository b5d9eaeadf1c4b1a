import pytest

from toothnet.errors import ConfigError
from toothnet.gradcheck import CASES, TABLE_COLUMNS, Case, check_case, run_gradcheck
from toothnet.tensor import Tensor


def case(name):
    return next(c for c in CASES if c.name == name)


def mixed_scales(detach_second_factor):
    def build(rng):
        a = Tensor(rng.uniform(0.0, 0.1, size=(3,)), requires_grad=True)
        b = Tensor(rng.uniform(1.0, 2.0, size=(4,)), requires_grad=True)

        def loss_fn():
            second = b.detach() if detach_second_factor else b
            return (a * 1e5).sum() + (b * second).sum()

        return loss_fn, [a, b]

    return Case("mixed_scales", build)


class TestCheckCase:
    @pytest.mark.parametrize("name", ["add_mul", "div_pow", "conv2d", "gap_fc", "center_loss", "box_loss"])
    def test_smooth_cases_pass(self, name):
        error, skipped = check_case(case(name), 0)
        assert error <= 1e-4
        assert skipped == 0

    def test_corrupted_gradient_is_caught(self):
        error, _ = check_case(case("add_mul"), 0, corrupt=True)
        assert error > 1e-2

    def test_mixed_scales_pass(self):
        error, skipped = check_case(mixed_scales(False), 0)
        assert error <= 1e-4
        assert skipped == 0

    def test_large_leaf_does_not_hide_wrong_small_leaf(self):
        # b * b.detach() backpropagates b instead of 2b; a's gradient is 1e5
        error, _ = check_case(mixed_scales(True), 0)
        assert error == pytest.approx(0.5, abs=1e-3)

    def test_every_case_has_unique_name(self):
        names = [c.name for c in CASES]
        assert len(names) == len(set(names))


class TestRunGradcheck:
    def test_table(self):
        table = run_gradcheck(seed=1, num_seeds=2, cases=["add_mul", "offset_loss"])
        assert list(table.columns) == TABLE_COLUMNS
        assert list(table["case"]) == ["add_mul", "offset_loss"]
        assert table["passed"].all()
        assert (table["seeds"] == 2).all()

    def test_injected_dr_fault_fails(self, caplog):
        table = run_gradcheck(seed=1, num_seeds=1, cases=["center_loss", "dr_loss"], corrupt=("dr_loss",))
        assert dict(zip(table["case"], table["passed"])) == {"center_loss": True, "dr_loss": False}
        assert table.loc[table["case"] == "dr_loss", "max_rel_error"].item() > 1e-2
        assert "gradient check failed for dr_loss" in caplog.text

    def test_unknown_case(self):
        with pytest.raises(ConfigError, match="unknown gradient check"):
            run_gradcheck(num_seeds=1, cases=["softmax"])

    @pytest.mark.slow
    def test_all_cases_pass(self):
        table = run_gradcheck(seed=0, num_seeds=20)
        assert table["passed"].all(), table.to_string()
