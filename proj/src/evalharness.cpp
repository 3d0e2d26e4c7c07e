#include "toolgcn/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "text_util.hpp"
#include "toolgcn/error.hpp"

namespace toolgcn {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

bool fold_matches(const std::string& subject, const std::string& wanted) {
  return subject == wanted || "Subj" + subject == wanted;
}

FoldResult run_fold(const Dataset& data, const Fold& fold, std::size_t fold_index, const CrossvalOptions& o,
                    std::mutex& callback_mutex) {
  const auto t0 = std::chrono::steady_clock::now();
  FoldResult r;
  r.subject = fold.subject;
  r.classes = o.model.classes;
  try {
    std::vector<std::size_t> train_idx, test_idx;
    for (const auto& id : fold.train_videos) train_idx.push_back(data.index_of(id));
    for (const auto& id : fold.test_videos) test_idx.push_back(data.index_of(id));

    // Audit: the training stream must not touch the held-out subject.
    const std::set<std::string> test_ids(fold.test_videos.begin(), fold.test_videos.end());
    for (std::size_t v : train_idx) {
      const auto& video = data.videos[v];
      if (test_ids.count(video.pose.video_id) || video.subject_id == fold.subject)
        throw ValidationError("fold " + fold.subject + ": training set contains held-out video " +
                              video.pose.video_id);
    }

    TrainConfig tc = o.train;
    tc.seed = derive_seed(o.train.seed, 11, fold_index);
    TrainOptions to;
    to.train_videos = train_idx;
    to.measure_train_accuracy = o.measure_train_accuracy;
    if (o.shuffle_labels) to.label_shuffle_seed = derive_seed(o.train.seed, 13, fold_index);
    if (o.work_dir) to.out_dir = *o.work_dir / ("fold_" + fold.subject);
    if (o.on_epoch)
      to.on_epoch = [&](const EpochMetrics& m) {
        std::lock_guard<std::mutex> lock(callback_mutex);
        o.on_epoch(fold.subject, m);
      };
    TrainResult trained = train(data, o.model, o.skeleton, tc, to);
    StgcnModel model(o.model, o.skeleton, std::move(trained.state.params));
    FoldResult eval = evaluate_fold(model, data, test_idx, tc.window);
    r.predictions = std::move(eval.predictions);
    r.train_windows = trained.windows;
    r.train_accuracy = trained.train_accuracy;
    score_fold(r);
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
    r.error_kind = dynamic_cast<const NumericalError*>(&e)    ? "numerical"
                   : dynamic_cast<const ValidationError*>(&e) ? "validation"
                   : dynamic_cast<const IoError*>(&e)         ? "io"
                                                              : "other";
    r.predictions.clear();
    r.accuracy = 0.0;
    r.confusion.assign(r.classes, std::vector<std::size_t>(r.classes, 0));
  }
  r.seconds = seconds_since(t0);
  if (o.on_fold) {
    std::lock_guard<std::mutex> lock(callback_mutex);
    o.on_fold(r);
  }
  return r;
}

}  // namespace

std::size_t FoldResult::correct() const {
  std::size_t n = 0;
  for (const auto& p : predictions) n += p.label == p.predicted;
  return n;
}

void score_fold(FoldResult& fold) {
  fold.confusion.assign(fold.classes, std::vector<std::size_t>(fold.classes, 0));
  for (const auto& p : fold.predictions) {
    if (p.label < 0 || static_cast<std::size_t>(p.label) >= fold.classes || p.predicted < 0 ||
        static_cast<std::size_t>(p.predicted) >= fold.classes)
      throw ValidationError("prediction label outside the class range");
    ++fold.confusion[static_cast<std::size_t>(p.label)][static_cast<std::size_t>(p.predicted)];
  }
  fold.accuracy = fold.predictions.empty()
                      ? 0.0
                      : static_cast<double>(fold.correct()) / static_cast<double>(fold.predictions.size());
}

FoldResult evaluate_fold(StgcnModel& model, const Dataset& data, std::span<const std::size_t> test_videos,
                         std::size_t window, std::size_t batch_size) {
  if (test_videos.empty()) throw ValidationError("evaluate_fold: empty test set");
  const auto windows = training_windows(data, test_videos, window, kEvalStep);
  if (windows.empty()) throw ValidationError("evaluate_fold: the test videos have no transcribed frames");
  const auto pred = predict_windows(model, data, windows, window, batch_size);
  FoldResult r;
  r.classes = model.config().classes;
  for (std::size_t i = 0; i < windows.size(); ++i)
    r.predictions.push_back(
        {data.videos[windows[i].video].pose.video_id, windows[i].end_frame, windows[i].label, pred[i]});
  score_fold(r);
  return r;
}

bool CrossvalReport::ok() const {
  return !folds.empty() && std::none_of(folds.begin(), folds.end(), [](const FoldResult& f) { return f.failed; });
}

void aggregate(CrossvalReport& report) {
  report.chance = report.vocabulary.empty() ? 0.0 : 1.0 / static_cast<double>(report.vocabulary.size());
  std::size_t correct = 0, total = 0;
  double sum = 0.0;
  for (const auto& f : report.folds) {
    correct += f.correct();
    total += f.predictions.size();
    sum += f.accuracy;
  }
  report.pooled = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  if (report.ok())
    report.average = sum / static_cast<double>(report.folds.size());
  else
    report.average.reset();
}

CrossvalReport crossval(const Dataset& data, const CrossvalOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  o.model.validate();
  o.train.validate();
  FoldPlan plan = build_louo_folds(data.manifest);
  check_fold_plan(plan, data.manifest);

  std::vector<std::size_t> selected;
  for (std::size_t i = 0; i < plan.folds.size(); ++i)
    if (!o.fold || fold_matches(plan.folds[i].subject, *o.fold)) selected.push_back(i);
  if (selected.empty()) {
    std::string names;
    for (const auto& f : plan.folds) names += " " + f.subject;
    throw ValidationError("no fold for subject '" + *o.fold + "'; subjects:" + names);
  }

  CrossvalReport report;
  report.vocabulary = data.manifest.vocabulary.labels();
  report.config_digest = o.model.digest();
  report.seed = o.train.seed;
  report.shuffled_labels = o.shuffle_labels;
  report.warnings = plan.warnings;
  report.folds.resize(selected.size());

  std::mutex callback_mutex;
  const std::size_t jobs = std::max<std::size_t>(1, std::min(o.jobs, selected.size()));
  if (jobs == 1) {
    for (std::size_t k = 0; k < selected.size(); ++k)
      report.folds[k] = run_fold(data, plan.folds[selected[k]], selected[k], o, callback_mutex);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t j = 0; j < jobs; ++j)
      workers.emplace_back([&] {
        for (std::size_t k = next++; k < selected.size(); k = next++)
          report.folds[k] = run_fold(data, plan.folds[selected[k]], selected[k], o, callback_mutex);
      });
    for (auto& w : workers) w.join();
  }
  aggregate(report);
  report.seconds = seconds_since(t0);
  return report;
}

nlohmann::json report_json(const CrossvalReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    nlohmann::json j = {{"subject", f.subject},
                        {"accuracy", f.accuracy},
                        {"segments", f.predictions.size()},
                        {"correct", f.correct()},
                        {"confusion", f.confusion},
                        {"failed", f.failed},
                        {"train_windows", f.train_windows},
                        {"seconds", f.seconds}};
    if (f.failed) {
      j["error"] = f.error;
      j["error_kind"] = f.error_kind;
    }
    if (f.train_accuracy) j["train_accuracy"] = *f.train_accuracy;
    folds.push_back(std::move(j));
  }
  return {{"format", "toolgcn-report"},
          {"version", 1},
          {"average_accuracy", r.average ? nlohmann::json(*r.average) : nlohmann::json(nullptr)},
          {"pooled_accuracy", r.pooled},
          {"chance", r.chance},
          {"vocabulary", r.vocabulary},
          {"config_digest", hex64(r.config_digest)},
          {"seed", r.seed},
          {"shuffled_labels", r.shuffled_labels},
          {"warnings", r.warnings},
          {"seconds", r.seconds},
          {"folds", folds}};
}

std::string confusion_svg(const FoldResult& fold, std::span<const std::string> labels) {
  const std::size_t K = fold.classes;
  const int cell = 36, left = 70, top = 70;
  const int size = static_cast<int>(K) * cell;
  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + size + 20 << "\" height=\""
    << top + size + 40 << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << left << "\" y=\"20\" font-size=\"14\">Fold " << xml_escape(fold.subject)
    << " accuracy " << format_double(std::round(fold.accuracy * 10000.0) / 100.0) << "%</text>\n"
    << "<text x=\"" << left + size / 2 << "\" y=\"" << top + size + 30
    << "\" text-anchor=\"middle\">predicted</text>\n"
    << "<text x=\"14\" y=\"" << top + size / 2 << "\" transform=\"rotate(-90 14 " << top + size / 2
    << ")\" text-anchor=\"middle\">true</text>\n";
  for (std::size_t i = 0; i < K; ++i) {
    const std::string name = i < labels.size() ? xml_escape(labels[i]) : std::to_string(i);
    s << "<text x=\"" << left + static_cast<int>(i) * cell + cell / 2 << "\" y=\"" << top - 8
      << "\" text-anchor=\"middle\">" << name << "</text>\n";
    s << "<text x=\"" << left - 8 << "\" y=\"" << top + static_cast<int>(i) * cell + cell / 2 + 4
      << "\" text-anchor=\"end\">" << name << "</text>\n";
  }
  for (std::size_t i = 0; i < K; ++i) {
    std::size_t row_total = 0;
    for (std::size_t j = 0; j < K; ++j) row_total += fold.confusion.at(i).at(j);
    for (std::size_t j = 0; j < K; ++j) {
      const std::size_t n = fold.confusion[i][j];
      const double share = row_total ? static_cast<double>(n) / static_cast<double>(row_total) : 0.0;
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - share)));
      const int x = left + static_cast<int>(j) * cell, y = top + static_cast<int>(i) * cell;
      s << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
        << "\" fill=\"rgb(" << shade << "," << shade << ",255)\" stroke=\"#999\"/>\n";
      if (n)
        s << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4 << "\" text-anchor=\"middle\" fill=\""
          << (share > 0.6 ? "white" : "black") << "\">" << n << "</text>\n";
    }
  }
  s << "</svg>\n";
  return s.str();
}

void emit_report(const CrossvalReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  auto write = [&](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
  };
  write(dir / "report.json", report_json(r).dump(2) + "\n");

  std::string table = "video_id,subject,end_frame,label,predicted\n";
  for (const auto& f : r.folds)
    for (const auto& p : f.predictions)
      table += p.video_id + "," + f.subject + "," + std::to_string(p.end_frame) + "," +
               r.vocabulary.at(static_cast<std::size_t>(p.label)) + "," +
               r.vocabulary.at(static_cast<std::size_t>(p.predicted)) + "\n";
  write(dir / "predictions.csv", table);

  for (const auto& f : r.folds)
    if (!f.failed) write(dir / ("confusion_" + f.subject + ".svg"), confusion_svg(f, r.vocabulary));
}

CrossvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  CrossvalReport r;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("format") != "toolgcn-report") throw ValidationError(path.string() + ": not a report");
    if (!j.at("average_accuracy").is_null()) r.average = j.at("average_accuracy").get<double>();
    r.pooled = j.at("pooled_accuracy").get<double>();
    r.chance = j.at("chance").get<double>();
    r.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    r.config_digest = std::stoull(j.at("config_digest").get<std::string>(), nullptr, 16);
    r.seed = j.at("seed").get<std::uint64_t>();
    r.shuffled_labels = j.at("shuffled_labels").get<bool>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    r.seconds = j.at("seconds").get<double>();
    for (const auto& fj : j.at("folds")) {
      FoldResult f;
      f.subject = fj.at("subject").get<std::string>();
      f.accuracy = fj.at("accuracy").get<double>();
      f.confusion = fj.at("confusion").get<std::vector<std::vector<std::size_t>>>();
      f.classes = f.confusion.size();
      f.failed = fj.at("failed").get<bool>();
      f.error = fj.value("error", std::string());
      f.error_kind = fj.value("error_kind", std::string());
      f.train_windows = fj.at("train_windows").get<std::size_t>();
      if (fj.contains("train_accuracy")) f.train_accuracy = fj.at("train_accuracy").get<double>();
      f.seconds = fj.at("seconds").get<double>();
      r.folds.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }

  // Per-segment rows come from the sibling prediction table.
  const auto table = path.parent_path() / "predictions.csv";
  std::ifstream t(table);
  if (!t) throw IoError("cannot open " + table.string());
  std::map<std::string, std::size_t> fold_of;
  for (std::size_t i = 0; i < r.folds.size(); ++i) fold_of[r.folds[i].subject] = i;
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < r.vocabulary.size(); ++i) label_of[r.vocabulary[i]] = static_cast<int>(i);
  std::string line;
  std::getline(t, line);
  std::size_t lineno = 1;
  while (std::getline(t, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    const std::string where = table.string() + ":" + std::to_string(lineno);
    if (cells.size() != 5 || !fold_of.count(cells[1]) || !label_of.count(cells[3]) || !label_of.count(cells[4]))
      throw ValidationError(where + ": malformed prediction row");
    r.folds[fold_of[cells[1]]].predictions.push_back(
        {cells[0], parse_index(cells[2], where), label_of[cells[3]], label_of[cells[4]]});
  }
  return r;
}

}  // namespace toolgcn
