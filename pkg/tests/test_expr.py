import math
import random
import unittest

from core import expr
from core.expr import Add, Const, Func, Mul, Neg, Pow, Sub, Var
from utils.errors import (DomainError, ExprSyntaxError, MissingBindingError, UnknownFunctionError,
                          UnknownVariableError)

VARS = ["t", "x1", "x2", "u1"]


def random_ast(rng: random.Random, depth: int):
    """微分の性質検査用のランダムな式木（定義域エラーを起こさない演算のみ）"""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.3:
            return Const(round(rng.uniform(-1.0, 1.0), 3))
        return Var(rng.choice(VARS))
    choice = rng.randrange(7)
    if choice == 0:
        return Add(random_ast(rng, depth - 1), random_ast(rng, depth - 1))
    if choice == 1:
        return Sub(random_ast(rng, depth - 1), random_ast(rng, depth - 1))
    if choice == 2:
        return Mul(random_ast(rng, depth - 1), random_ast(rng, depth - 1))
    if choice == 3:
        return Neg(random_ast(rng, depth - 1))
    if choice == 4:
        return Pow(random_ast(rng, depth - 1), rng.randrange(3))
    if choice == 5:
        # 分母は 1 + (.)^2 で正
        denominator = Add(Const(1.0), Pow(random_ast(rng, depth - 1), 2))
        return expr.Div(random_ast(rng, depth - 1), denominator)
    return Func(rng.choice(["sin", "cos", "tanh"]), random_ast(rng, depth - 1))


class TestParse(unittest.TestCase):

    def test_precedence_root_is_subtraction(self):
        tree = expr.parse("u1*x2 - 0.5*u1^2", ["t", "x1", "x2", "u1"])
        self.assertIsInstance(tree, Sub)
        self.assertIsInstance(tree.left, Mul)
        self.assertIsInstance(tree.right, Mul)
        self.assertIsInstance(tree.right.right, Pow)

    def test_power_binds_tighter_than_unary_minus(self):
        tree = expr.parse("-x1^2", ["x1"])
        self.assertEqual(expr.evaluate(tree, {"x1": 3.0}), -9.0)

    def test_sin_plus_variable(self):
        tree = expr.parse("sin(t) + x1", ["t", "x1"])
        self.assertEqual(expr.evaluate(tree, {"t": 0.0, "x1": 2.0}), 2.0)

    def test_syntax_error_offset(self):
        with self.assertRaises(ExprSyntaxError) as ctx:
            expr.parse("x1 +* u1", ["x1", "u1"])
        self.assertEqual(ctx.exception.offset, 4)

    def test_empty_text(self):
        with self.assertRaises(ExprSyntaxError):
            expr.parse("   ", ["x1"])

    def test_unknown_variable(self):
        with self.assertRaises(UnknownVariableError):
            expr.parse("u3 + x1", ["x1", "u1", "u2"])

    def test_unknown_function(self):
        with self.assertRaises(UnknownFunctionError):
            expr.parse("log(x1)", ["x1"])

    def test_non_integer_exponent_rejected(self):
        with self.assertRaises(ExprSyntaxError):
            expr.parse("x1^0.5", ["x1"])

    def test_unparse_reparses_to_equal_tree(self):
        rng = random.Random(7)
        for _ in range(200):
            tree = random_ast(rng, 4)
            again = expr.parse(expr.unparse(tree), VARS)
            self.assertEqual(again, tree, expr.unparse(tree))

    def test_free_vars(self):
        tree = expr.parse("0.5*x2^2*u1 + sin(t)", VARS)
        self.assertEqual(expr.free_vars(tree), {"x2", "u1", "t"})


class TestEvaluate(unittest.TestCase):

    def test_square(self):
        self.assertEqual(expr.evaluate(expr.parse("x1^2", ["x1"]), {"x1": 3.0}), 9.0)

    def test_division_by_zero_is_domain_error(self):
        with self.assertRaises(DomainError):
            expr.evaluate(expr.parse("1/x1", ["x1"]), {"x1": 0.0})

    def test_sqrt_of_negative_is_domain_error(self):
        with self.assertRaises(DomainError):
            expr.evaluate(expr.parse("sqrt(x1)", ["x1"]), {"x1": -1.0})

    def test_exp_times_control(self):
        value = expr.evaluate(expr.parse("exp(t)*u1", ["t", "u1"]), {"t": 1.0, "u1": 2.0})
        self.assertAlmostEqual(value, 5.43656365691809, places=10)

    def test_missing_binding(self):
        with self.assertRaises(MissingBindingError):
            expr.evaluate(expr.parse("x1 + x2", ["x1", "x2"]), {"x1": 1.0})

    def test_deterministic(self):
        tree = expr.parse("tanh(x1)*cos(t) - x1^3/(1 + t^2)", ["t", "x1"])
        env = {"t": 0.37, "x1": -1.21}
        self.assertEqual(expr.evaluate(tree, env), expr.evaluate(tree, env))

    def test_compiled_matches_evaluate(self):
        rng = random.Random(11)
        for _ in range(50):
            tree = random_ast(rng, 4)
            compiled = expr.compile_expr(tree, VARS)
            values = [rng.uniform(-1.0, 1.0) for _ in VARS]
            self.assertEqual(compiled(values), expr.evaluate(tree, dict(zip(VARS, values))))


class TestDifferentiate(unittest.TestCase):

    def test_product_rule(self):
        d = expr.differentiate(expr.parse("x1*x1", ["x1"]), "x1")
        for x in (-2.0, 0.0, 1.5):
            self.assertAlmostEqual(expr.evaluate(d, {"x1": x}), 2.0 * x, places=12)

    def test_hamiltonian_derivative(self):
        d = expr.differentiate(expr.parse("u1*x2 - 0.5*u1^2", VARS), "u1")
        env = {"t": 0.0, "x1": 0.0, "x2": 0.7, "u1": 0.2}
        self.assertAlmostEqual(expr.evaluate(d, env), 0.5, places=12)

    def test_time_derivative_matches_finite_difference(self):
        tree = expr.parse("sin(t)*x1", ["t", "x1"])
        d = expr.differentiate(tree, "t")
        h = 1e-6
        fd = (expr.evaluate(tree, {"t": 0.7 + h, "x1": 2.0})
              - expr.evaluate(tree, {"t": 0.7 - h, "x1": 2.0})) / (2 * h)
        self.assertAlmostEqual(expr.evaluate(d, {"t": 0.7, "x1": 2.0}), fd, delta=1e-7)

    def test_unknown_variable(self):
        with self.assertRaises(UnknownVariableError):
            expr.differentiate(expr.parse("x1", ["x1"]), "x9", ["x1"])

    def test_random_trees_match_central_differences(self):
        rng = random.Random(2024)
        h = 1e-6
        for _ in range(100):
            tree = random_ast(rng, 3)
            var = rng.choice(VARS)
            d = expr.differentiate(tree, var)
            for _ in range(100):
                env = {name: rng.uniform(-1.0, 1.0) for name in VARS}
                plus, minus = dict(env), dict(env)
                plus[var] += h
                minus[var] -= h
                fd = (expr.evaluate(tree, plus) - expr.evaluate(tree, minus)) / (2 * h)
                exact = expr.evaluate(d, env)
                self.assertLessEqual(abs(exact - fd), 1e-6 * (1 + abs(fd)), expr.unparse(tree))


class TestSimplify(unittest.TestCase):

    def test_zero_product_removed(self):
        self.assertEqual(expr.simplify(expr.parse("0*x1 + u1", ["x1", "u1"])), Var("u1"))

    def test_constant_folding(self):
        self.assertEqual(expr.simplify(expr.parse("2*3", [])), Const(6.0))

    def test_multiplication_by_one(self):
        self.assertEqual(expr.simplify(expr.parse("sin(t)*1", ["t"])), Func("sin", Var("t")))

    def test_preserves_value(self):
        rng = random.Random(3)
        for _ in range(100):
            tree = random_ast(rng, 5)
            simplified = expr.simplify(tree)
            env = {name: rng.uniform(-1.0, 1.0) for name in VARS}
            a = expr.evaluate(tree, env)
            b = expr.evaluate(simplified, env)
            self.assertTrue(math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12), expr.unparse(tree))


if __name__ == '__main__':
    unittest.main()
