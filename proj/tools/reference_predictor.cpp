// Reference predictor speaking the PTCH/PRED file protocol:
//
//   episeg_reference_predictor <request> <response>
//
// Scores each pixel by its distance to the class colours of the synthetic HE
// render (near-white pixels count as background) and writes a softmax over
// the four classes.

#include <array>
#include <cmath>
#include <exception>
#include <iostream>

#include "episeg/eval.hpp"
#include "episeg/synth.hpp"

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: episeg_reference_predictor <request> <response>\n";
    return 2;
  }
  try {
    const episeg::Grid<float> req = episeg::read_predictor_request(argv[1]);
    const auto colors = episeg::synth_he_class_colors();
    constexpr double kTemperature = 0.01;

    episeg::ProbabilityRaster out(req.width(), req.height(), episeg::kClassCount, 1.0, 0.0f);
    for (std::size_t i = 0; i < req.pixel_count(); ++i) {
      const float* px = &req.data()[3 * i];
      std::array<double, episeg::kClassCount> logit{};
      for (int c = 0; c < episeg::kClassCount; ++c) {
        double d2 = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double diff = px[k] - colors[c][k] / 255.0;
          d2 += diff * diff;
        }
        logit[c] = -d2 / kTemperature;
      }
      const double white = (px[0] + px[1] + px[2]) / 3.0;
      if (white > 0.93) logit[0] = 0.0;
      double mx = logit[0];
      for (double l : logit) mx = std::max(mx, l);
      double sum = 0.0;
      for (double& l : logit) sum += (l = std::exp(l - mx));
      for (int c = 0; c < episeg::kClassCount; ++c) {
        out.data()[i * episeg::kClassCount + c] = static_cast<float>(logit[c] / sum);
      }
    }
    episeg::write_predictor_response(out, argv[2]);
  } catch (const std::exception& e) {
    std::cerr << "episeg_reference_predictor: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
