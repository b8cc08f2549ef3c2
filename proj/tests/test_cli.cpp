#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = 0;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

class Sandbox {
 public:
  Sandbox() : dir_(fs::temp_directory_path() / ("capsnet_cli_" + std::to_string(std::random_device{}()))) {
    fs::create_directories(dir_);
  }
  ~Sandbox() { fs::remove_all(dir_); }
  const fs::path& dir() const { return dir_; }

  // Runs the CLI from inside the sandbox directory.
  Run capsnet(const std::string& args) const {
    const char* bin = std::getenv("CAPSNET_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "CAPSNET_BIN must point at the capsnet executable");
    const std::string cmd = "cd '" + dir_.string() + "' && '" + bin + "' " + args + " > out.txt 2> err.txt";
    const int raw = std::system(cmd.c_str());
    Run r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(dir_ / "out.txt");
    r.err = slurp(dir_ / "err.txt");
    return r;
  }

  void set_epochs(const std::string& config, int epochs) const {
    std::string text = slurp(dir_ / config);
    const auto pos = text.find("\"epochs\": 50");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 12, "\"epochs\": " + std::to_string(epochs));
    std::ofstream(dir_ / config) << text;
  }

 private:
  fs::path dir_;
};

std::size_t count_lines(const std::string& s) {
  std::size_t n = 0;
  for (char c : s) n += c == '\n' ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("cli rejects bad invocations") {
  Sandbox sb;
  auto r = sb.capsnet("");
  CHECK(r.status != 0);
  CHECK_FALSE(r.err.empty());

  r = sb.capsnet("eval --frobnicate");
  CHECK(r.status != 0);
  CHECK_FALSE(r.err.empty());

  r = sb.capsnet("train -c missing.json");
  CHECK(r.status != 0);
  CHECK(r.err.find("missing.json") != std::string::npos);

  std::ofstream(sb.dir() / "junk.ckpt") << "not a checkpoint";
  std::ofstream(sb.dir() / "data.tsv") << "0\ta b\n";
  std::ofstream(sb.dir() / "emb.txt") << "a 1 0\nb 0 1\n";
  r = sb.capsnet("eval --checkpoint junk.ckpt --data data.tsv --embeddings emb.txt");
  CHECK(r.status == 1);
  CHECK(r.err.find("capsnet: error:") != std::string::npos);

  std::ofstream(sb.dir() / "bad.json") << R"({"epochz": 3})";
  r = sb.capsnet("train -c bad.json");
  CHECK(r.status == 1);
  CHECK(r.err.find("epochz") != std::string::npos);
}

TEST_CASE("cli gradcheck reports every model and exits 0") {
  Sandbox sb;
  const auto r = sb.capsnet("gradcheck --models 4 --routing both");
  CHECK(r.status == 0);
  CHECK(count_lines(r.out) == 1 + 8 + 1);  // header, rows, summary
  CHECK(r.out.find("worst ") != std::string::npos);
  CHECK(r.out.find("0 of 8 above") != std::string::npos);
}

TEST_CASE("cli synth, train, eval and trace") {
  Sandbox sb;
  auto r = sb.capsnet("synth --task classification -o c --docs 120");
  REQUIRE(r.status == 0);
  for (const char* f : {"train.tsv", "test.tsv", "embeddings.txt", "config.json"}) CHECK(fs::exists(sb.dir() / "c" / f));
  sb.set_epochs("c/config.json", 2);

  r = sb.capsnet("train -c c/config.json --log c/train.log");
  REQUIRE(r.status == 0);
  CHECK(fs::exists(sb.dir() / "c/model.ckpt"));
  CHECK(count_lines(slurp(sb.dir() / "c/train.log")) == 2);
  CHECK(r.out.find("P@1") != std::string::npos);

  r = sb.capsnet("eval --checkpoint c/model.ckpt --data c/test.tsv --embeddings c/embeddings.txt --k 1,2 --format tsv");
  REQUIRE(r.status == 0);
  CHECK(r.out.find("P@1\t") != std::string::npos);
  CHECK(r.out.find("NDCG@2\t") != std::string::npos);
  CHECK(r.out.find("instances\t24\n") != std::string::npos);

  r = sb.capsnet("trace --checkpoint c/model.ckpt --data c/test.tsv --embeddings c/embeddings.txt --index 3 -o t.tsv");
  REQUIRE(r.status == 0);
  const std::string trace = slurp(sb.dir() / "t.tsv");
  const std::size_t iterations = count_lines(trace);
  CHECK(iterations >= 1);
  CHECK(r.out.find("wrote " + std::to_string(iterations) + " iterations") != std::string::npos);
  CHECK(trace.rfind("1\t", 0) == 0);

  r = sb.capsnet("trace --checkpoint c/model.ckpt --data c/test.tsv --embeddings c/embeddings.txt --index 999 -o t.tsv");
  CHECK(r.status == 1);
}

TEST_CASE("cli eval on a memorised toy model reports P@1 = 1") {
  Sandbox sb;
  REQUIRE(sb.capsnet("synth --task classification -o m --docs 40 --seed 2").status == 0);
  sb.set_epochs("m/config.json", 150);
  auto r = sb.capsnet("train -c m/config.json");
  REQUIRE(r.status == 0);
  r = sb.capsnet("eval --checkpoint m/model.ckpt --data m/train.tsv --embeddings m/embeddings.txt --k 1 --format tsv");
  REQUIRE(r.status == 0);
  CHECK(r.out.find("P@1\t1\n") != std::string::npos);
}

TEST_CASE("cli QA pipeline") {
  Sandbox sb;
  REQUIRE(sb.capsnet("synth --task qa -o q --questions 60").status == 0);
  sb.set_epochs("q/config.json", 2);
  auto r = sb.capsnet("train -c q/config.json");
  REQUIRE(r.status == 0);
  r = sb.capsnet("eval --checkpoint q/model.ckpt --data q/test.tsv --embeddings q/embeddings.txt --format tsv");
  REQUIRE(r.status == 0);
  CHECK(r.out.find("MAP\t") != std::string::npos);
  CHECK(r.out.find("MRR\t") != std::string::npos);
  r = sb.capsnet("trace --checkpoint q/model.ckpt --data q/test.tsv --embeddings q/embeddings.txt --index 0 -o qt.tsv");
  REQUIRE(r.status == 0);
  CHECK(r.out.find("wrote " + std::to_string(count_lines(slurp(sb.dir() / "qt.tsv"))) + " iterations") !=
        std::string::npos);
}
