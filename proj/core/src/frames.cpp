// SPDX-License-Identifier: Apache-2.0
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

#include "pasta/error.hpp"
#include "pasta/hashing.hpp"
#include "pasta/pair_factory.hpp"

namespace pasta {

std::string encode_frame(const std::filesystem::path& path, int max_edge_px) {
    cv::Mat image = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (image.empty()) {
        throw Error(ErrorCode::Io, "cannot decode frame " + path.string());
    }
    const int longest = std::max(image.cols, image.rows);
    if (max_edge_px > 0 && longest > max_edge_px) {
        const double scale = static_cast<double>(max_edge_px) / longest;
        cv::Mat resized;
        cv::resize(image, resized,
                   cv::Size(std::max(1, static_cast<int>(std::lround(image.cols * scale))),
                            std::max(1, static_cast<int>(std::lround(image.rows * scale)))),
                   0, 0, cv::INTER_AREA);
        image = std::move(resized);
    }
    std::vector<unsigned char> jpeg;
    if (!cv::imencode(".jpg", image, jpeg, {cv::IMWRITE_JPEG_QUALITY, 90})) {
        throw Error(ErrorCode::Io, "cannot encode frame " + path.string());
    }
    return base64_encode(std::string_view(reinterpret_cast<const char*>(jpeg.data()), jpeg.size()));
}

FrameLoader file_frame_loader(int max_edge_px) {
    return [max_edge_px](const VideoRef& video, std::size_t index) {
        return encode_frame(video.frames.at(index), max_edge_px);
    };
}

FrameLoader placeholder_frame_loader() {
    return [](const VideoRef& video, std::size_t index) {
        return base64_encode(video.video_id + "#" + std::to_string(index));
    };
}

}  // namespace pasta
