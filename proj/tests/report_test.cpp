#include <gtest/gtest.h>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dflnet/report.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

const std::string kHeader = "epoch,split,loss_total,loss_ce,loss_intra,loss_inter,acc_clean,acc_fgsm,acc_pgd,acc_cw,wall_ms\n";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dflnet_report_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write_csv(const fs::path& dir, const std::string& name, const std::string& body) {
  const fs::path p = dir / name;
  std::ofstream(p) << body;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Three epochs with decreasing loss and a test row at the end.
std::string three_epochs() {
  return kHeader +
         "1,train,2.0,2.0,0,0,50,,,,0\n"
         "1,val,1.8,1.8,0,0,55,,20,,0\n"
         "2,train,1.0,1.0,0,0,70,,,,0\n"
         "2,val,0.9,0.9,0,0,75,,40,,0\n"
         "3,train,0.5,0.5,0,0,90,,,,0\n"
         "3,val,0.6,0.6,0,0,88,,30,,0\n"
         "3,test,0.6,0.6,0,0,87.5,60.25,31,12,0\n";
}

std::string one_epoch() {
  return kHeader +
         "1,train,1.5,1.5,0,0,60,,,,0\n"
         "1,val,1.4,1.4,0,0,61,,5,,0\n";
}

}  // namespace

TEST(Tables, SingleRunGivesSingleRow) {
  const auto dir = scratch("single");
  dflnet::ReportSpec spec;
  spec.runs = {{"CE", write_csv(dir, "a.csv", three_epochs())}};
  spec.output_dir = dir / "out";
  const auto path = dflnet::render_tables(spec);
  EXPECT_EQ(path.filename(), "table_no-defense.csv");
  EXPECT_EQ(slurp(path),
            "setting,run,epoch,split,clean,fgsm,pgd_10,cw\n"
            "no-defense,CE,3,test,87.5,60.25,31,12\n");
}

TEST(Tables, EachRunUsesItsOwnFinalEpoch) {
  const auto dir = scratch("epochs");
  dflnet::ReportSpec spec;
  spec.mode = dflnet::TableMode::adversarial;
  spec.runs = {{"long", write_csv(dir, "a.csv", three_epochs())}, {"short", write_csv(dir, "b.csv", one_epoch())}};
  const auto rows = dflnet::table_rows(spec);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].epoch, 3u);
  EXPECT_EQ(rows[0].split, "test");
  EXPECT_EQ(rows[1].epoch, 1u);
  EXPECT_EQ(rows[1].split, "val");
  EXPECT_EQ(rows[1].pgd, 5.0);
}

TEST(Tables, ValuesMatchDirectReRead) {
  const auto dir = scratch("reread");
  const auto csv = write_csv(dir, "a.csv", three_epochs());
  dflnet::ReportSpec spec;
  spec.runs = {{"x", csv}};
  spec.output_dir = dir / "out";
  const auto table = dflnet::read_csv(dflnet::render_tables(spec));
  const auto src = dflnet::read_csv(csv);
  const auto& last = src.rows.back();
  ASSERT_EQ(table.rows.size(), 1u);
  EXPECT_EQ(table.rows[0][table.column("clean")], last[src.column("acc_clean")]);
  EXPECT_EQ(table.rows[0][table.column("fgsm")], last[src.column("acc_fgsm")]);
  EXPECT_EQ(table.rows[0][table.column("pgd_10")], last[src.column("acc_pgd")]);
  EXPECT_EQ(table.rows[0][table.column("cw")], last[src.column("acc_cw")]);
}

TEST(Tables, BestRobustPicksHighestValidationRow) {
  const auto dir = scratch("best");
  dflnet::ReportSpec spec;
  spec.selection = dflnet::RowSelection::best_robust;
  spec.runs = {{"x", write_csv(dir, "a.csv", three_epochs())}};
  const auto rows = dflnet::table_rows(spec);
  EXPECT_EQ(rows[0].epoch, 2u);
  EXPECT_EQ(rows[0].pgd, 40.0);
}

TEST(Tables, AblationOrderAndRequiredLabels) {
  const auto dir = scratch("ablation");
  const auto csv = write_csv(dir, "a.csv", one_epoch());
  dflnet::ReportSpec spec;
  spec.mode = dflnet::TableMode::ablation;
  spec.runs = {{"DFL+PCL", csv}, {"PCL", csv}, {"DFL", csv}};
  const auto rows = dflnet::table_rows(spec);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].label, "DFL");
  EXPECT_EQ(rows[1].label, "PCL");
  EXPECT_EQ(rows[2].label, "DFL+PCL");
  spec.runs.pop_back();
  EXPECT_THROW(dflnet::table_rows(spec), dflnet::ConfigError);
}

TEST(Tables, MissingColumnNamesFileAndColumn) {
  const auto dir = scratch("missing");
  std::string body = three_epochs();
  body.replace(body.find("acc_pgd"), 7, "acc_xyz");
  const auto csv = write_csv(dir, "broken.csv", body);
  dflnet::ReportSpec spec;
  spec.runs = {{"x", csv}};
  try {
    dflnet::table_rows(spec);
    FAIL();
  } catch (const dflnet::FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("broken.csv"), std::string::npos) << msg;
    EXPECT_NE(msg.find("acc_pgd"), std::string::npos) << msg;
  }
}

TEST(Tables, LabelRules) {
  dflnet::ReportSpec spec;
  EXPECT_THROW(spec.validate(), dflnet::ConfigError);
  spec.runs = {{"a,b", "x.csv"}};
  EXPECT_THROW(spec.validate(), dflnet::ConfigError);
  spec.runs = {{"a", "x.csv"}, {"a", "y.csv"}};
  EXPECT_THROW(spec.validate(), dflnet::ConfigError);
}

TEST(Curves, WellFormedAndDeterministic) {
  const auto dir = scratch("curves");
  dflnet::ReportSpec spec;
  spec.runs = {{"plain", write_csv(dir, "a.csv", three_epochs())}, {"a<b>&\"c\"", write_csv(dir, "b.csv", one_epoch())}};
  spec.output_dir = dir / "one";
  const auto first = dflnet::render_curves(spec);
  spec.output_dir = dir / "two";
  const auto second = dflnet::render_curves(spec);
  ASSERT_EQ(first.size(), second.size());
  ASSERT_FALSE(first.empty());
  for (std::size_t i = 0; i < first.size(); ++i) {
    EXPECT_EQ(slurp(first[i]), slurp(second[i])) << first[i];
    pt::ptree tree;
    EXPECT_NO_THROW(pt::read_xml(first[i].string(), tree)) << first[i];
  }
}

TEST(Curves, SingleEpochRunIsSinglePointPolyline) {
  const auto dir = scratch("single_point");
  dflnet::ReportSpec spec;
  spec.runs = {{"one", write_csv(dir, "a.csv", one_epoch())}};
  spec.output_dir = dir / "out";
  dflnet::render_curves(spec);
  pt::ptree tree;
  pt::read_xml((dir / "out" / "loss_total_train.svg").string(), tree);
  const auto points = tree.get<std::string>("svg.polyline.<xmlattr>.points");
  EXPECT_EQ(std::count(points.begin(), points.end(), ','), 1);
}

TEST(Curves, PolylineMatchesLinearAxisTransform) {
  const auto dir = scratch("coords");
  dflnet::ReportSpec spec;
  spec.runs = {{"x", write_csv(dir, "a.csv", three_epochs())}};
  spec.output_dir = dir / "out";
  dflnet::render_curves(spec);
  pt::ptree tree;
  pt::read_xml((dir / "out" / "loss_total_train.svg").string(), tree);
  std::istringstream pts(tree.get<std::string>("svg.polyline.<xmlattr>.points"));

  // Plot box 640x400 with margins left 70, right 150, top 30, bottom 50.
  const double plot_w = 640 - 70 - 150, plot_h = 400 - 30 - 50;
  const std::vector<std::pair<double, double>> data{{1, 2.0}, {2, 1.0}, {3, 0.5}};
  for (const auto& [e, v] : data) {
    double x = 0, y = 0;
    char comma = 0;
    ASSERT_TRUE(pts >> x >> comma >> y);
    EXPECT_NEAR(x, 70 + (e - 1) / 2 * plot_w, 1e-3);
    EXPECT_NEAR(y, 30 + plot_h - (v - 0.5) / 1.5 * plot_h, 1e-3);
  }
}

TEST(Curves, UnknownMetricIsConfigError) {
  EXPECT_THROW(dflnet::curve_series({}, "acc_magic", "train"), dflnet::ConfigError);
  std::vector<std::pair<std::string, std::vector<dflnet::MetricsRow>>> runs{{"a", {dflnet::MetricsRow{}}}};
  runs[0].second[0].split = "train";
  EXPECT_THROW(dflnet::curve_series(runs, "acc_magic", "train"), dflnet::ConfigError);
}
