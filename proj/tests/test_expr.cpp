#include <gtest/gtest.h>

#include "cmc/expr.hpp"

using cmc::Expr;
using cmc::Vec;

TEST(Expr, EvaluatesArithmeticAndFunctions) {
  Vec x(3);
  x << 0.5, -1.25, 2.0;
  EXPECT_DOUBLE_EQ(Expr::parse("1 + 2*3 - 4/8").eval(x), 6.5);
  EXPECT_DOUBLE_EQ(Expr::parse("x0^2 + x1*x2").eval(x), 0.25 - 2.5);
  EXPECT_DOUBLE_EQ(Expr::parse("-x2^2").eval(x), -4.0);
  EXPECT_NEAR(Expr::parse("sin(x0)^2 + cos(u0)^2").eval(x), 1.0, 1e-15);
  EXPECT_NEAR(Expr::parse("exp(log(x2)) * sqrt(4)").eval(x), 4.0, 1e-14);
}

TEST(Expr, AcceptsPiSpellings) {
  Vec x = Vec::Zero(1);
  EXPECT_DOUBLE_EQ(Expr::parse("2*pi").eval(x), 2 * cmc::kPi);
  EXPECT_DOUBLE_EQ(Expr::parse("2\xCF\x80").eval(x), 2 * cmc::kPi);
}

TEST(Expr, SymbolicDerivativeMatchesCentralDifference) {
  Expr f = Expr::parse("x0^3*sin(x1) + exp(x0*x1)/(1 + x1^2) + sqrt(2 + x0^2)");
  Vec x(2);
  x << 0.3, -0.7;
  for (int v = 0; v < 2; ++v) {
    Vec xp = x, xm = x;
    const double h = 1e-5;
    xp[v] += h;
    xm[v] -= h;
    double fd = (f.eval(xp) - f.eval(xm)) / (2 * h);
    EXPECT_NEAR(f.derivative(v).eval(x), fd, 1e-8);
  }
  EXPECT_EQ(f.max_variable(), 1);
  EXPECT_DOUBLE_EQ(Expr::parse("x1 + 3").derivative(0).eval(x), 0.0);
}

TEST(Expr, RejectsMalformedInput) {
  EXPECT_THROW(Expr::parse("1 +"), cmc::Error);
  EXPECT_THROW(Expr::parse("foo(1)"), cmc::Error);
  EXPECT_THROW(Expr::parse("(1 + 2"), cmc::Error);
  EXPECT_THROW(Expr::parse("1 2"), cmc::Error);
}
