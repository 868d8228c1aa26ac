#include "detkit/schedule.hpp"

#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

namespace detkit {
namespace {

ScheduleConfig warmup_3000() {
  ScheduleConfig c;
  c.base_lr = 0.001;
  c.warmup_iters = 3000;
  c.total_iters = 20000;
  return c;
}

TEST(ScheduleTest, KeyPoints) {
  const auto c = warmup_3000();
  EXPECT_EQ(lr_at(c, 0), 0.0);
  EXPECT_EQ(lr_at(c, 3000), 0.001);
  EXPECT_DOUBLE_EQ(lr_at(c, 1500), 0.0005);
  EXPECT_NEAR(lr_at(c, 3000 + (20000 - 3000) / 2), 0.0005, 1e-18);
  EXPECT_EQ(lr_at(c, 20000), 0.0);
}

TEST(ScheduleTest, MinLrFloorAndContinuity) {
  auto c = warmup_3000();
  c.min_lr = 1e-5;
  EXPECT_EQ(lr_at(c, c.total_iters), 1e-5);
  // Left limit of the linear ramp at the boundary equals the scaled base.
  const double left = c.scaled_base_lr() * static_cast<double>(c.warmup_iters) / static_cast<double>(c.warmup_iters);
  EXPECT_NEAR(lr_at(c, c.warmup_iters), left, 1e-12);
  EXPECT_NEAR(lr_at(c, c.warmup_iters - 1), left, left / 2999.0 + 1e-15);
}

TEST(ScheduleTest, BatchScaling) {
  auto one = warmup_3000();
  for (int64_t k : {2, 3, 4}) {
    auto scaled = one;
    scaled.actual_batch = k * one.base_batch;
    for (int64_t it = 0; it <= one.total_iters; it += 97) {
      EXPECT_EQ(lr_at(scaled, it), static_cast<double>(k) * lr_at(one, it)) << "k=" << k << " iter=" << it;
    }
  }
}

TEST(ScheduleTest, Errors) {
  auto c = warmup_3000();
  EXPECT_THROW(lr_at(c, -1), IterationRangeError);
  EXPECT_THROW(lr_at(c, c.total_iters + 1), IterationRangeError);
  c.total_iters = c.warmup_iters;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = warmup_3000();
  c.min_lr = c.base_lr;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = warmup_3000();
  c.base_batch = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(schedule_dump(warmup_3000(), 0), std::invalid_argument);
}

TEST(ScheduleTest, DumpShapeAndMonotonicity) {
  const auto c = warmup_3000();
  const auto two = schedule_dump(c, c.total_iters);
  ASSERT_EQ(two.size(), 2u);
  EXPECT_EQ(two[0].iter, 0);
  EXPECT_EQ(two[1].iter, c.total_iters);

  const auto rows = schedule_dump(c, 7);
  EXPECT_EQ(rows.back().iter, c.total_iters);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].iter <= c.warmup_iters) {
      EXPECT_GE(rows[i].lr, rows[i - 1].lr);
    } else if (rows[i - 1].iter >= c.warmup_iters) {
      EXPECT_LE(rows[i].lr, rows[i - 1].lr);
    }
  }

  auto doubled = c;
  doubled.actual_batch = 2 * c.base_batch;
  const auto rows2 = schedule_dump(doubled, 7);
  ASSERT_EQ(rows2.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows2[i].lr, 2.0 * rows[i].lr);
}

TEST(ScheduleTest, CsvFormat) {
  auto c = warmup_3000();
  c.total_iters = 6000;
  std::ostringstream os;
  write_schedule_csv(os, schedule_dump(c, 3000));
  EXPECT_EQ(os.str(), "iter,lr\n0,0\n3000,0.001\n6000,0\n");
  std::ostringstream os2;
  write_schedule_csv(os2, {{1, 1.0 / 3.0}});
  EXPECT_EQ(os2.str(), "iter,lr\n1,0.333333333\n");
}

}  // namespace
}  // namespace detkit
