#include "brainit/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <stdexcept>

#include "brainit/autodiff.hpp"

namespace brainit::img {

Tensor hwc_to_chw(const Tensor& hwc) {
    if (hwc.rank() != 3 || hwc.dim(2) != 3) throw std::invalid_argument("expected [H,W,3]");
    const std::int64_t h = hwc.dim(0), w = hwc.dim(1);
    Tensor out({3, h, w});
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t c = 0; c < 3; ++c) out.at3(c, y, x) = hwc.at3(y, x, c);
    return out;
}

Tensor chw_to_hwc(const Tensor& chw) {
    if (chw.rank() != 3 || chw.dim(0) != 3) throw std::invalid_argument("expected [3,H,W]");
    const std::int64_t h = chw.dim(1), w = chw.dim(2);
    Tensor out({h, w, 3});
    for (std::int64_t y = 0; y < h; ++y)
        for (std::int64_t x = 0; x < w; ++x)
            for (std::int64_t c = 0; c < 3; ++c) out.at3(y, x, c) = chw.at3(c, y, x);
    return out;
}

Tensor resize(const Tensor& hwc, std::int64_t out_h, std::int64_t out_w) {
    if (hwc.dim(0) == out_h && hwc.dim(1) == out_w) return hwc;
    return chw_to_hwc(nn::upsample_bilinear_value(hwc_to_chw(hwc), out_h, out_w));
}

Tensor clip01(Tensor img) {
    for (std::int64_t i = 0; i < img.numel(); ++i) img[i] = std::min(Real(1), std::max(Real(0), img[i]));
    return img;
}

void write_png(const std::string& path, const Tensor& hwc) {
    if (hwc.rank() != 3 || hwc.dim(2) != 3) throw std::invalid_argument("expected [H,W,3]");
    const int h = static_cast<int>(hwc.dim(0)), w = static_cast<int>(hwc.dim(1));
    cv::Mat m(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) {
                const Real v = std::min(Real(1), std::max(Real(0), hwc.at3(y, x, c)));
                px[2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));  // BGR
            }
        }
    if (!cv::imwrite(path, m)) throw std::runtime_error("failed to write " + path);
}

Tensor read_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("failed to read " + path);
    Tensor out({m.rows, m.cols, 3});
    for (int y = 0; y < m.rows; ++y)
        for (int x = 0; x < m.cols; ++x) {
            const auto& px = m.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c) out.at3(y, x, c) = static_cast<Real>(px[2 - c]) / 255.0;
        }
    return out;
}

}  // namespace brainit::img
