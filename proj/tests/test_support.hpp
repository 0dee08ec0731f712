#ifndef CLIFFM_TEST_SUPPORT_HPP
#define CLIFFM_TEST_SUPPORT_HPP

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "cliffm/clif.hpp"

namespace cliffm::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "cliffm") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << text;
}

inline constexpr TimeMs kT0 = 1577836800000;  // 2020-01-01T00:00:00Z

inline TimeMs hours(double h) { return static_cast<TimeMs>(h * kHourMs); }

// Bundle builder for hand-made cohorts.
struct BundleBuilder {
  ClifBundle b;

  BundleBuilder& patient(const std::string& pid, const std::string& sex = "female",
                         const std::string& race = "white") {
    b.patients.push_back({pid, race, "non_hispanic", sex});
    return *this;
  }
  BundleBuilder& stay(const std::string& hid, const std::string& pid, TimeMs admit, double los_hours,
                      double age = 60.0, const std::string& discharge = "home") {
    b.hospitalizations.push_back({hid, pid, admit, admit + hours(los_hours), age, "ed", discharge});
    return *this;
  }
  BundleBuilder& vital(const std::string& hid, TimeMs t, const std::string& cat, double v) {
    b.vitals.push_back({hid, t, cat, v});
    return *this;
  }
  BundleBuilder& lab(const std::string& hid, TimeMs t, const std::string& cat, double v) {
    b.labs.push_back({hid, t, cat, v});
    return *this;
  }
  BundleBuilder& adt(const std::string& hid, TimeMs t, const std::string& loc) {
    b.adt.push_back({hid, t, loc});
    return *this;
  }
  BundleBuilder& resp(const std::string& hid, TimeMs t, const std::string& mode,
                      const std::string& device, bool prone = false) {
    b.respiratory.push_back({hid, t, mode, device, prone});
    return *this;
  }
};

}  // namespace cliffm::testing

#endif  // CLIFFM_TEST_SUPPORT_HPP
