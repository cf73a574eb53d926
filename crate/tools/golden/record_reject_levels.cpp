// Records reference reject levels for 24x24 patches using OpenCV's
// CascadeClassifier. Each truncated cascade (first k stages) is run on a
// single-window image; the patch passes k stages iff the k-stage cascade
// accepts it.
//
// usage: record_reject_levels <cascade_dir> <num_stages> <patches.bin> <out.txt>
// patches.bin: u32 count, then count * 576 bytes.
#include <opencv2/objdetect.hpp>
#include <opencv2/core.hpp>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

int main(int argc, char** argv) {
    if (argc != 5) return 2;
    std::string dir = argv[1];
    int stages = std::stoi(argv[2]);
    std::ifstream in(argv[3], std::ios::binary);
    uint32_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 4);
    std::vector<std::vector<uint8_t>> patches(count, std::vector<uint8_t>(576));
    for (auto& p : patches) in.read(reinterpret_cast<char*>(p.data()), 576);

    cv::setNumThreads(0);
    std::vector<int> levels(count, 0);
    std::vector<int> broken(count, 0);
    for (int k = 1; k <= stages; ++k) {
        cv::CascadeClassifier cc(dir + "/stages_" + std::to_string(k) + ".xml");
        if (cc.empty()) { std::fprintf(stderr, "failed to load %d\n", k); return 3; }
        for (uint32_t i = 0; i < count; ++i) {
            cv::Mat img(24, 24, CV_8UC1, patches[i].data());
            std::vector<cv::Rect> found;
            cc.detectMultiScale(img, found, 1.5, 0, 0, cv::Size(24, 24), cv::Size(24, 24));
            bool accepted = !found.empty();
            if (accepted) {
                if (levels[i] != k - 1) broken[i] = 1;
                levels[i] = k;
            }
        }
    }
    std::FILE* out = std::fopen(argv[4], "w");
    for (uint32_t i = 0; i < count; ++i) {
        std::fprintf(out, "%d %d\n", levels[i], broken[i]);
    }
    std::fclose(out);
    return 0;
}
