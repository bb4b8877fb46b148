"""Ground-truth simulator: branch structure, steady state, validity checks."""

import numpy as np
import pytest

from parwh.lti import RationalTF
from parwh.signals import MultisineSpec, gen_multisine
from parwh.simulator import (Branch, ScalarNonlinearity, TrueSystem,
                             check_assumptions, common_denominator,
                             load_reference, make_tf, reference_names, simulate,
                             true_branch_numerators)


def multisine(N=512, amp=1.0, seed=0, M=2, P=1, dc=0.0):
    spec = MultisineSpec(N=N, f_s=1.0, excited_bins=np.arange(1, N // 4),
                         amplitude=amp, dc_offset=dc, seed=seed)
    return gen_multisine(spec, M=M, P=P)


def single_branch(nl, front=None, back=None):
    front = front or RationalTF([1.0, 0.4], [1.0, -0.5])
    back = back or RationalTF([0.8, -0.2], [1.0, 0.3, 0.1])
    return TrueSystem([Branch(front, nl, back)])


class TestSimulate:
    def test_linear_collapse(self):
        sys = single_branch(ScalarNonlinearity.identity())
        u = multisine()
        y0, x, r = simulate(sys, u)
        combined = sys.branches[0].front * sys.branches[0].back
        want = combined.filt(u.data, initial_state="steady_periodic")
        np.testing.assert_allclose(y0.data, want, atol=1e-10 * np.max(np.abs(want)))
        np.testing.assert_allclose(r[0], x[0])

    def test_even_nonlinearity_parity(self):
        sys = single_branch(ScalarNonlinearity("poly", [0.0, 0.0, 1.0]))
        u = multisine(seed=3)
        y_pos, _, _ = simulate(sys, u)
        y_neg, _, _ = simulate(sys, u.with_data(-u.data))
        np.testing.assert_allclose(y_pos.data, y_neg.data, atol=1e-12)

    def test_two_branch_superposition(self):
        sys = load_reference("twobranch_cubic")
        u = multisine(seed=5)
        y, _, _ = simulate(sys, u)
        y1, _, _ = simulate(TrueSystem(sys.branches[:1]), u)
        y2, _, _ = simulate(TrueSystem(sys.branches[1:]), u)
        np.testing.assert_allclose(y.data, y1.data + y2.data, atol=1e-12)

    def test_output_is_periodic(self):
        sys = load_reference("twobranch_cubic")
        u = multisine(seed=7, P=3)
        y, _, _ = simulate(sys, u)
        scale = np.max(np.abs(y.data))
        np.testing.assert_allclose(y.data[:, 0], y.data[:, 1], atol=1e-10 * scale)
        np.testing.assert_allclose(y.data[:, 0], y.data[:, 2], atol=1e-10 * scale)

    def test_gain_exchange_invariance(self):
        # scaling the nonlinearity by c and the back gain by 1/c leaves y unchanged
        c = 3.7
        nl1 = ScalarNonlinearity("poly", [0.0, 1.0, 0.0, 0.2])
        nl2 = ScalarNonlinearity("poly", [0.0, c, 0.0, 0.2 * c])
        back = RationalTF([0.8, -0.2], [1.0, 0.3, 0.1])
        back_scaled = RationalTF(back.num / c, back.den)
        u = multisine(seed=11)
        y1, _, _ = simulate(single_branch(nl1, back=back), u)
        y2, _, _ = simulate(single_branch(nl2, back=back_scaled), u)
        np.testing.assert_allclose(y1.data, y2.data, atol=1e-10 * np.max(np.abs(y1.data)))

    def test_nonfinite_nonlinearity_reported(self):
        bad = ScalarNonlinearity("poly", [0.0, 1e200, 0.0, 1e200])
        sys = TrueSystem([Branch(RationalTF([1e150], [1.0]),
                                 bad, RationalTF([1.0], [1.0]))])
        with pytest.raises(ValueError, match="branch 0"):
            simulate(sys, multisine())


class TestNonlinearities:
    def test_poly(self):
        f = ScalarNonlinearity("poly", [1.0, 2.0, 3.0])
        assert f(2.0) == pytest.approx(1 + 4 + 12)

    def test_tanh(self):
        f = ScalarNonlinearity("tanh", [2.0, 0.5])
        assert f(1.0) == pytest.approx(2 * np.tanh(0.5))

    def test_deadzone(self):
        f = ScalarNonlinearity("deadzone", [0.5])
        np.testing.assert_allclose(f(np.array([-1.0, -0.3, 0.2, 1.5])),
                                   [-0.5, 0.0, 0.0, 1.0])

    def test_roundtrip(self):
        f = ScalarNonlinearity("poly", [0.0, 1.0, 0.1])
        assert ScalarNonlinearity.from_dict(f.to_dict()).params == f.params


class TestAssumptionChecks:
    def setpoints(self, amps=(0.4, 1.0), dc=0.0):
        return [MultisineSpec(N=512, f_s=1.0, excited_bins=np.arange(1, 128),
                              amplitude=a, dc_offset=dc, seed=17 + i)
                for i, a in enumerate(amps)]

    def test_reference_system_passes(self):
        rep = check_assumptions(load_reference("twobranch_cubic"),
                                self.setpoints(), mc_samples=1 << 14)
        assert rep["all_passed"], rep

    def test_even_nonlinearity_fails_gain(self):
        sys = single_branch(ScalarNonlinearity("poly", [0.0, 0.0, 1.0]))
        rep = check_assumptions(sys, self.setpoints(), mc_samples=1 << 15)
        assert not rep["nonzero_gain"]["passed"]

    def test_pole_zero_cancellation_detected(self):
        front = RationalTF([1.0, -0.5], [1.0, -0.3])   # zero at 0.5
        back = RationalTF([1.0], [1.0, -0.5])          # pole at 0.5
        sys = single_branch(ScalarNonlinearity.identity(), front=front, back=back)
        rep = check_assumptions(sys, self.setpoints())
        assert not rep["no_pole_zero_cancellation"]["passed"]

    def test_duplicate_branch_fails_rank(self):
        ref = load_reference("twobranch_cubic")
        dup = TrueSystem([ref.branches[0], ref.branches[0]])
        rep = check_assumptions(dup, self.setpoints(), mc_samples=1 << 13)
        assert not rep["independent_branch_numerators"]["passed"]

    def test_shared_front_back_pole_detected(self):
        b1 = Branch(RationalTF([1.0], [1.0, -0.5]), ScalarNonlinearity.identity(),
                    RationalTF([1.0], [1.0, -0.2]))
        b2 = Branch(RationalTF([1.0], [1.0, 0.4]), ScalarNonlinearity.identity(),
                    RationalTF([1.0], [1.0, -0.5]))  # back pole 0.5 = front pole of b1
        rep = check_assumptions(TrueSystem([b1, b2]), self.setpoints(),
                                mc_samples=1 << 13)
        assert not rep["no_shared_front_back_poles"]["passed"]


class TestStructureHelpers:
    def test_common_denominator_degree(self):
        sys = load_reference("twobranch_cubic")
        den = common_denominator(sys)
        assert den.size == 13 and den[0] == 1.0

    def test_true_numerators_match_bla_algebra(self):
        # per branch: num(front)*num(back)*prod(other dens); check against a
        # direct frequency-domain evaluation of H_i S_i * common denominator
        sys = load_reference("twobranch_cubic")
        B = true_branch_numerators(sys)
        den = common_denominator(sys)
        bins = np.arange(1, 40)
        zinv = np.exp(-2j * np.pi * bins / 256)
        C = np.polynomial.polynomial.polyval(zinv, den)
        for i, br in enumerate(sys.branches):
            lhs = np.polynomial.polynomial.polyval(zinv, B[i]) / C
            rhs = (br.front * br.back).eval_zinv(zinv)
            np.testing.assert_allclose(lhs, rhs, rtol=1e-8)

    def test_reference_names(self):
        names = reference_names()
        assert "twobranch_cubic" in names and "linear_single" in names

    def test_system_json_roundtrip(self, tmp_path):
        sys = load_reference("twobranch_cubic")
        sys.save_json(tmp_path / "s.json")
        back = TrueSystem.load_json(tmp_path / "s.json")
        assert back.n_br == 2
        np.testing.assert_array_equal(back.branches[0].front.num,
                                      sys.branches[0].front.num)

    def test_make_tf(self):
        tf = make_tf([0.5], [0.3 + 0.4j, 0.3 - 0.4j], gain=2.0)
        np.testing.assert_allclose(tf.num, [2.0, -1.0])
        np.testing.assert_allclose(tf.den, [1.0, -0.6, 0.25])
