#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "imo/array_io.hpp"
#include "imo/phantom.hpp"

namespace imo {

// On-disk layout: one directory per sample holding fundus.imoa, oct.imoa,
// mask.imoa, and meta.txt (key=value: cdr, grade). Mask and meta are optional
// on read so segmentation inputs without ground truth still load.
template <typename T>
void write_sample_dir(const std::string& dir, const PhantomSample<T>& s) {
    std::filesystem::create_directories(dir);
    write_array(dir + "/fundus.imoa", s.fundus);
    write_array(dir + "/oct.imoa", s.oct);
    write_array(dir + "/mask.imoa", s.mask);
    const std::string tmp = dir + "/meta.txt.tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os) throw FileError("cannot write " + tmp);
        char buf[64];
        std::snprintf(buf, sizeof buf, "cdr=%.17g\n", s.cdr);
        os << buf << "grade=" << s.grade << "\n";
    }
    std::filesystem::rename(tmp, dir + "/meta.txt");
}

template <typename T>
PhantomSample<T> read_sample_dir(const std::string& dir) {
    PhantomSample<T> s;
    s.fundus = read_array<T>(dir + "/fundus.imoa");
    s.oct = read_array<T>(dir + "/oct.imoa");
    if (std::filesystem::exists(dir + "/mask.imoa")) s.mask = read_array<T>(dir + "/mask.imoa");
    s.grade = -1;
    std::ifstream is(dir + "/meta.txt");
    if (is) {
        std::string line;
        while (std::getline(is, line)) {
            const auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
            if (key == "cdr") s.cdr = std::stod(val);
            if (key == "grade") s.grade = std::stoi(val);
        }
    }
    return s;
}

inline std::vector<std::string> list_sample_dirs(const std::string& data_dir) {
    if (!std::filesystem::is_directory(data_dir))
        throw FileError("dataset directory not found: " + data_dir);
    std::vector<std::string> dirs;
    for (const auto& e : std::filesystem::directory_iterator(data_dir))
        if (e.is_directory() && std::filesystem::exists(e.path() / "fundus.imoa"))
            dirs.push_back(e.path().string());
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) throw FileError("no samples found under " + data_dir);
    return dirs;
}

template <typename T>
std::vector<PhantomSample<T>> load_dataset(const std::string& data_dir) {
    std::vector<PhantomSample<T>> out;
    for (const auto& d : list_sample_dirs(data_dir)) out.push_back(read_sample_dir<T>(d));
    return out;
}

}  // namespace imo
