#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "hat/core.hpp"

namespace hat::testing {

inline Example example(const std::string& id, const std::string& text, const std::string& lf, int template_id,
                       Origin origin = Origin::source) {
    std::string lang(origin == Origin::source ? kSourceLanguage : kTargetLanguage);
    return Example{make_utterance(id, lang, text), LogicalForm(lf, template_id), origin};
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("hat_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace hat::testing
