#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include <dermpolar/diagnosis_blocks.hpp>
#include <dermpolar/errors.hpp>
#include <dermpolar/gradcheck_blocks.hpp>
#include <dermpolar/lesion_geometry.hpp>
#include <dermpolar/structure_layers.hpp>
#include <dermpolar/value_grid.hpp>
#include <dermpolar/view_augmentation.hpp>

namespace py = pybind11;
using namespace dermpolar;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

ValueGrid to_grid(const DoubleArray& array, int min_rank, int max_rank,
                  const char* what) {
    const int rank = static_cast<int>(array.ndim());
    if (rank < min_rank || rank > max_rank) {
        throw py::value_error(std::string(what) + ": expected a " +
                              std::to_string(min_rank) + "..." + std::to_string(max_rank) +
                              "-d array, got " + std::to_string(rank) + "-d");
    }
    std::vector<int> shape(rank);
    std::size_t total = 1;
    for (int i = 0; i < rank; ++i) {
        shape[i] = static_cast<int>(array.shape(i));
        total *= static_cast<std::size_t>(array.shape(i));
    }
    std::vector<double> data(total);
    std::memcpy(data.data(), array.data(), total * sizeof(double));
    return ValueGrid::from_data(std::move(shape), std::move(data));
}

py::array_t<double> to_array(const ValueGrid& grid) {
    std::vector<py::ssize_t> shape(grid.shape().begin(), grid.shape().end());
    py::array_t<double> out(shape);
    std::memcpy(out.mutable_data(), grid.data(), grid.size() * sizeof(double));
    return out;
}

/// Nonzero pixels are foreground; any numeric dtype is accepted.
LesionMask to_mask(const DoubleArray& array) {
    ValueGrid grid = to_grid(array, 2, 2, "mask");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid.data()[i] = grid.data()[i] != 0.0 ? 1.0 : 0.0;
    }
    return LesionMask::from_grid(std::move(grid));
}

PolarPoolSpec make_pool_spec(int rings, int angles, const std::string& mode,
                             double overlap_frac) {
    PolarPoolSpec spec;
    spec.rings = rings;
    spec.angles = angles;
    spec.overlap_frac = overlap_frac;
    if (mode == "average") {
        spec.mode = PolarPoolSpec::Mode::Average;
    } else if (mode == "max") {
        spec.mode = PolarPoolSpec::Mode::Max;
    } else {
        throw py::value_error("mode must be 'average' or 'max', got '" + mode + "'");
    }
    spec.validate();
    return spec;
}

py::dict view_to_dict(const View& view) {
    py::dict out;
    out["image"] = to_array(view.image);
    out["mask"] = to_array(view.mask.grid);
    out["rho"] = to_array(view.npc.rho);
    out["theta"] = to_array(view.npc.theta);
    out["rotation_deg"] = view.spec.rotation_deg;
    out["rotation_index"] = view.spec.rotation_index;
    out["crop_index"] = view.spec.crop_index;
    out["crop"] = py::make_tuple(view.spec.crop.x, view.spec.crop.y, view.spec.crop.w,
                                 view.spec.crop.h);
    out["fallback"] = view.spec.fallback;
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Numerical blocks for dermoscopy analysis: lesion geometry, view "
              "augmentation, weak-label projection, and polar diagnosis features.";
    m.attr("__version__") = "0.1.0";

    {
        py::list names;
        for (const char* name : kStructureNames) names.append(name);
        m.attr("STRUCTURE_NAMES") = names;
    }
    {
        py::list names;
        for (const char* name : kDiagnosisClassNames) names.append(name);
        m.attr("DIAGNOSIS_CLASSES") = names;
    }
    m.attr("STREAKS_INDEX") = kStreaksIndex;

    // Contract violations on inputs surface as ValueError; everything else
    // raised by the library stays a RuntimeError.
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const InvalidShape& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const ShapeError& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const EmptyMask& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const DegenerateMask& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        } catch (const InfeasibleConstraints& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        }
    });

    py::class_<MomentEllipse>(m, "MomentEllipse",
                              "Ellipse sharing a mask's centroid and second moments; "
                              "semi-axes a >= b, orientation in [0, pi).")
        .def(py::init([](double cx, double cy, double a, double b, double orientation) {
                 return MomentEllipse{cx, cy, a, b, orientation};
             }),
             py::arg("cx"), py::arg("cy"), py::arg("a"), py::arg("b"),
             py::arg("orientation"))
        .def_readonly("cx", &MomentEllipse::cx)
        .def_readonly("cy", &MomentEllipse::cy)
        .def_readonly("a", &MomentEllipse::a)
        .def_readonly("b", &MomentEllipse::b)
        .def_readonly("orientation", &MomentEllipse::orientation)
        .def("__repr__", [](const MomentEllipse& e) {
            return "MomentEllipse(cx=" + std::to_string(e.cx) + ", cy=" +
                   std::to_string(e.cy) + ", a=" + std::to_string(e.a) + ", b=" +
                   std::to_string(e.b) + ", orientation=" + std::to_string(e.orientation) +
                   ")";
        });

    py::class_<NormalizedPolarMap>(m, "PolarMap",
                                   "Per-pixel normalized polar coordinates of a lesion: "
                                   "rho is 1 on the moment-ellipse boundary (unclamped "
                                   "outside), theta lies in [0, 2 pi).")
        .def_property_readonly("rho",
                               [](const NormalizedPolarMap& n) { return to_array(n.rho); })
        .def_property_readonly(
            "theta", [](const NormalizedPolarMap& n) { return to_array(n.theta); })
        .def_property_readonly("shape", [](const NormalizedPolarMap& n) {
            return py::make_tuple(n.height(), n.width());
        });

    m.def(
        "ellipse_of_mask",
        [](const DoubleArray& mask) { return ellipse_of_mask(to_mask(mask)); },
        py::arg("mask"),
        "Moment ellipse of a binary lesion mask (nonzero pixels are foreground).");

    m.def(
        "rasterize_ellipse",
        [](const MomentEllipse& ellipse, int height, int width) {
            return to_array(rasterize_ellipse(ellipse, height, width).grid);
        },
        py::arg("ellipse"), py::arg("height"), py::arg("width"),
        "Binary mask of the pixels whose centers lie inside the ellipse.");

    m.def(
        "polar_map_of_mask",
        [](const DoubleArray& mask) { return npc_from_mask(to_mask(mask)); },
        py::arg("mask"),
        "Normalized polar coordinates at the mask's own resolution.");

    m.def(
        "polar_map_from_grids",
        [](const DoubleArray& rho, const DoubleArray& theta) {
            ValueGrid rho_grid = to_grid(rho, 2, 2, "rho");
            ValueGrid theta_grid = to_grid(theta, 2, 2, "theta");
            if (rho_grid.shape() != theta_grid.shape()) {
                throw py::value_error("rho and theta must share a shape");
            }
            return NormalizedPolarMap{std::move(rho_grid), std::move(theta_grid), {}};
        },
        py::arg("rho"), py::arg("theta"),
        "Wraps precomputed rho/theta grids as a PolarMap.");

    m.def(
        "largest_inscribed_rect",
        [](int width, int height, double angle_deg) {
            const RectI rect = largest_inscribed_rect(width, height, angle_deg);
            return py::make_tuple(rect.x, rect.y, rect.w, rect.h);
        },
        py::arg("width"), py::arg("height"), py::arg("angle_deg"),
        "Maximum-area axis-aligned rectangle (x, y, w, h) inside a width x height "
        "image rotated by angle_deg, in rotated-canvas coordinates.");

    m.def(
        "augment",
        [](const DoubleArray& image, const DoubleArray& mask, const std::string& case_id,
           std::optional<std::vector<double>> rotation_angles_deg, int crops_per_rotation,
           int output_side, int min_view_lesion_px) {
            AugmentOptions options;
            if (rotation_angles_deg) options.rotation_angles_deg = *rotation_angles_deg;
            options.crops_per_rotation = crops_per_rotation;
            options.output_side = output_side;
            options.min_view_lesion_px = min_view_lesion_px;
            const ViewSet set = augment_case(case_id, to_grid(image, 3, 3, "image"),
                                             to_mask(mask), options);
            py::list views;
            for (const View& view : set.views) views.append(view_to_dict(view));
            return views;
        },
        py::arg("image"), py::arg("mask"), py::kw_only(), py::arg("case_id") = "case",
        py::arg("rotation_angles_deg") = std::nullopt, py::arg("crops_per_rotation") = 3,
        py::arg("output_side") = 256, py::arg("min_view_lesion_px") = 16,
        "Rotation x crop view set of one case. Each view is a dict with the resized "
        "image, mask, polar coordinates, and its provenance.");

    m.def(
        "parametric_softmax",
        [](const DoubleArray& scores, double gamma) {
            return to_array(parametric_softmax(to_grid(scores, 1, 3, "scores"), gamma));
        },
        py::arg("scores"), py::arg("gamma") = 20.0,
        "Softmax over the trailing channel axis of gamma-scaled scores.");

    m.def(
        "accumulated_probability",
        [](const DoubleArray& maps, const DoubleArray& region) {
            return accumulated_probability(to_grid(maps, 3, 3, "maps"),
                                           to_grid(region, 2, 2, "region"));
        },
        py::arg("maps"), py::arg("region"),
        "Per-channel probability mass accumulated over the region's pixels.");

    m.def(
        "project_structures",
        [](const DoubleArray& maps, const NormalizedPolarMap& npc,
           const std::vector<int>& labels, double epsilon_absent, double alpha_low,
           double alpha_high, double beta_low, double step, int max_iterations,
           double tolerance_fraction) {
            BoundConfig bounds;
            bounds.epsilon_absent = epsilon_absent;
            bounds.alpha_low = alpha_low;
            bounds.alpha_high = alpha_high;
            bounds.beta_low = beta_low;
            const ConstraintSet constraints =
                constraints_from_labels(StructureWeakLabels::from_ints(labels), npc,
                                        default_structure_regions(), bounds);
            ProjectionOptions options;
            options.step = step;
            options.max_iterations = max_iterations;
            options.tolerance_fraction = tolerance_fraction;
            ProjectionResult result =
                project_onto_constraints(to_grid(maps, 3, 3, "maps"), constraints, options);
            py::dict out;
            out["maps"] = to_array(result.maps);
            out["residuals"] = result.residuals;
            out["iterations"] = result.iterations;
            return out;
        },
        py::arg("maps"), py::arg("polar_map"), py::arg("labels"), py::kw_only(),
        py::arg("epsilon_absent") = 0.01, py::arg("alpha_low") = 0.02,
        py::arg("alpha_high") = 0.30, py::arg("beta_low") = 0.30, py::arg("step") = 0.1,
        py::arg("max_iterations") = 2000, py::arg("tolerance_fraction") = 1e-3,
        "KL projection of per-pixel structure distributions onto the constraints "
        "induced by weak labels (0 absent, 1 local, 2 global; one label per "
        "structure). Returns the projected maps, per-constraint residuals, and the "
        "iteration count.");

    m.def(
        "polar_pool",
        [](const DoubleArray& features, const NormalizedPolarMap& npc, int rings,
           int angles, const std::string& mode, double overlap_frac) {
            return to_array(polar_pool(to_grid(features, 3, 3, "features"), npc,
                                       make_pool_spec(rings, angles, mode, overlap_frac)));
        },
        py::arg("features"), py::arg("polar_map"), py::kw_only(), py::arg("rings") = 3,
        py::arg("angles") = 6, py::arg("mode") = "average",
        py::arg("overlap_frac") = 0.0,
        "Pools features over rings x angles polar sectors of the lesion; ring "
        "boundaries are the equal-area defaults.");

    m.def(
        "asymmetry",
        [](const DoubleArray& polar) {
            return to_array(asymmetry(to_grid(polar, 3, 3, "polar")));
        },
        py::arg("polar"),
        "Fold asymmetry of a polar-pooled grid: mean absolute difference between "
        "mirrored sectors for each of the angles/2 fold axes.");

    m.def(
        "modulation",
        [](const DoubleArray& features, const DoubleArray& structures) {
            return to_array(modulation(to_grid(features, 3, 3, "features"),
                                       to_grid(structures, 3, 3, "structures")));
        },
        py::arg("features"), py::arg("structures"),
        "Concatenates the features with one copy modulated by each structure map "
        "(average-pooled to the feature resolution).");

    m.def(
        "fuse_views",
        [](const std::vector<std::array<double, 3>>& per_view) {
            const std::array<double, 3> fused = fuse_views(per_view);
            return py::make_tuple(fused[0], fused[1], fused[2]);
        },
        py::arg("per_view"),
        "Renormalized product of per-view class distributions.");

    m.def(
        "gradcheck_errors",
        [](int trials, std::uint64_t seed) {
            py::dict out;
            for (const GradcheckBlock& block : gradcheck_blocks()) {
                out[py::str(block.name)] = gradcheck_block_error(block, trials, seed);
            }
            return out;
        },
        py::arg("trials") = 2, py::arg("seed") = 123,
        "Worst finite-difference gradient error per differentiable block.");
}
