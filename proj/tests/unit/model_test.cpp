#include <gtest/gtest.h>

#include <set>

#include "regcd/error.hpp"
#include "regcd/evaluate.hpp"
#include "regcd/model.hpp"
#include "tiny_model.hpp"

namespace regcd {
namespace {

class ModelTest : public ::testing::Test {
 protected:
  RunConfig cfg = testing::tiny_config();
  JointModel model{cfg, std::make_shared<ToyBackend>(testing::tiny_denoiser(cfg))};
  std::vector<SamplePair> data = testing::tiny_samples(2);
};

TEST_F(ModelTest, ForwardShapes) {
  const ModelOutput out = model.forward(data[0], 4, "k", true);
  EXPECT_EQ(out.logits.shape(), (Shape{25, 8, 8}));
  EXPECT_EQ(out.aux.shape(), (Shape{1, 8, 8}));
  EXPECT_EQ(out.coarse_flow.shape(), (Shape{2, 8, 8}));
  EXPECT_EQ(out.refined.flow.shape(), (Shape{2, 32, 32}));
  EXPECT_EQ(out.cd_logits.shape(), (Shape{1, 32, 32}));
  EXPECT_EQ(out.covered.shape(), (Shape{1, 32, 32}));
  const ModelOutput no_cd = model.forward(data[0], 4, "k", false);
  EXPECT_FALSE(no_cd.cd_logits.defined());
  EXPECT_EQ(max_abs_diff(no_cd.refined.flow.value(), out.refined.flow.value()), 0.0);
}

TEST_F(ModelTest, ParameterNamesAreUniqueAndGrouped) {
  std::set<std::string> names;
  int cd = 0;
  for (const auto& p : model.parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << p.name;
    cd += model.is_cd_parameter(p.name);
  }
  EXPECT_GT(cd, 0);
  EXPECT_LT(cd, static_cast<int>(names.size()));
}

TEST_F(ModelTest, LossesAreFiniteAndCombine) {
  const ModelOutput out = model.forward(data[1], 9, "", true);
  const LossBreakdown l = model.losses(out, data[1], 0.5);
  ASSERT_TRUE(l.cd.defined());
  EXPECT_TRUE(std::isfinite(l.total.value()[0]));
  EXPECT_NEAR(l.total.value()[0], l.flow.value()[0] + 0.5 * l.cd_value, 1e-12);
  const LossBreakdown zero = model.losses(model.forward(data[1], 9, "", false), data[1], 0.0);
  EXPECT_FALSE(zero.cd.defined());
  EXPECT_EQ(zero.total.value()[0], zero.flow.value()[0]);
}

TEST_F(ModelTest, EvaluationIsDeterministic) {
  const EvalReport a = evaluate_samples(model, data, {"x0", "x1"}, {});
  const EvalReport b = evaluate_samples(model, data, {"x0", "x1"}, {});
  EXPECT_EQ(report_json(a), report_json(b));
  EXPECT_EQ(a.samples, 2);
  EXPECT_THROW(evaluate_samples(model, data, {"x0"}, {}), ValidationError);
}

}  // namespace
}  // namespace regcd
