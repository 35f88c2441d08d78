// Copyright (c) ckptbench contributors.
// SPDX-License-Identifier: Apache-2.0

// Python bindings. Structured values cross the boundary as the same JSON
// documents the CLI writes (layout plan, manifest, run config, report), decoded
// into plain dicts with the json module.

#include "ckptbench/bench.hpp"

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace ckptbench;

namespace {

py::object loads(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

std::string dumps(const py::object& value) { return py::module_::import("json").attr("dumps")(value).cast<std::string>(); }

/// Keys of `overrides` replace the defaults of a run configuration.
RunConfig config_of(const py::dict& overrides)
{
    py::dict merged = loads(run_config_to_json(RunConfig{}));
    for (auto item : overrides) merged[item.first] = item.second;
    return run_config_from_json(dumps(merged));
}

py::dict object_dict(const ObjectSpec& o)
{
    py::dict d;
    d["object_id"] = o.object_id;
    d["rank"] = o.rank;
    d["shard"] = o.shard_index;
    d["kind"] = std::string(to_string(o.kind));
    d["size_bytes"] = o.size_bytes;
    d["content_seed"] = o.content_seed;
    return d;
}

py::dict object_result_dict(const ObjectResult& r)
{
    py::dict d;
    d["object_id"] = r.object_id;
    d["rank"] = r.rank;
    d["status"] = std::string(to_string(r.status));
    d["detail"] = r.detail;
    return d;
}

AggregationStrategy strategy_of(const std::string& name, std::uint64_t fragment_bytes)
{
    AggregationStrategy s{strategy_kind_from_string(name)};
    s.chunk_bytes = fragment_bytes;
    return s;
}

EngineConfig engine_of(const std::string& backend, bool direct, std::uint32_t queue_depth)
{
    EngineConfig c;
    c.backend = backend_from_string(backend);
    c.direct = direct;
    c.queue_depth = queue_depth;
    return c;
}

} // namespace

PYBIND11_MODULE(_core, m)
{
    m.doc() = "Checkpoint/restore I/O benchmark core";

    static py::exception<Error> error(m, "Error", PyExc_RuntimeError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object exc = py::handle(error.ptr())(e.what());
            exc.attr("code") = std::string(to_string(e.code()));
            exc.attr("exit_code") = exit_code_for(e.code());
            PyErr_SetObject(error.ptr(), exc.ptr());
        }
    });

    m.attr("MANIFEST_SCHEMA") = std::string(kManifestSchema);
    m.attr("REPORT_SCHEMA") = std::string(kReportSchema);
    m.attr("MANIFEST_FILE") = std::string(kManifestFile);

    py::class_<WorkloadSpec>(m, "Workload")
        .def_readonly("name", &WorkloadSpec::name)
        .def_readonly("num_ranks", &WorkloadSpec::num_ranks)
        .def_readonly("shards_per_rank", &WorkloadSpec::shards_per_rank)
        .def_readonly("master_seed", &WorkloadSpec::master_seed)
        .def_readonly("provenance", &WorkloadSpec::provenance)
        .def_property_readonly("total_bytes", [](const WorkloadSpec& w) { return w.total_bytes(); })
        .def_property_readonly("objects",
                               [](const WorkloadSpec& w) {
                                   py::list out;
                                   for (const auto& o : w.objects) out.append(object_dict(o));
                                   return out;
                               })
        .def("__len__", [](const WorkloadSpec& w) { return w.objects.size(); })
        .def("__repr__", [](const WorkloadSpec& w) {
            return "<Workload " + w.name + ": " + std::to_string(w.objects.size()) + " objects, " +
                   std::to_string(w.num_ranks) + " ranks>";
        });

    m.def(
        "synthetic_workload",
        [](std::uint64_t total_bytes, std::uint64_t chunk_bytes, std::uint32_t num_ranks, std::uint64_t seed) {
            return generate_synthetic(total_bytes, chunk_bytes, num_ranks, seed);
        },
        py::arg("total_bytes"), py::arg("chunk_bytes"), py::arg("num_ranks") = 1, py::arg("seed") = 42,
        "Tensors of chunk_bytes filling total_bytes per rank, plus one header and one lean object per rank.");
    m.def(
        "profile_workload",
        [](const std::string& name_or_path, double scale, std::uint64_t seed) {
            auto p = resolve_profile(name_or_path);
            if (scale != 1.0) p = scale_profile(p, scale);
            return generate_from_profile(p, seed);
        },
        py::arg("profile"), py::arg("scale") = 1.0, py::arg("seed") = 42,
        "Workload of a built-in profile name (3b, 7b, 13b) or a profile file.");
    m.def("builtin_profiles", &builtin_profile_names);

    m.def(
        "object_checksum",
        [](std::uint64_t seed, std::uint64_t size) {
            std::vector<std::byte> buf(size);
            return fill_buffer(buf, seed);
        },
        py::arg("content_seed"), py::arg("size_bytes"), "FNV-1a 64 checksum of an object's generated content.");

    m.def(
        "plan_layout",
        [](const WorkloadSpec& w, const std::string& strategy, std::uint64_t alignment, bool direct,
           std::uint64_t fragment_bytes) {
            return loads(layout_to_json(plan_layout(w, strategy_of(strategy, fragment_bytes), alignment, direct)));
        },
        py::arg("workload"), py::arg("strategy"), py::arg("alignment") = kDefaultAlignment, py::arg("direct") = false,
        py::arg("fragment_bytes") = 512 * MiB, "Layout plan as a dict (the layout JSON document).");
    m.def(
        "checkpoint",
        [](const WorkloadSpec& w, const std::filesystem::path& dir, const std::string& strategy, const std::string& backend,
           bool direct, const std::string& emulation, std::uint64_t fragment_bytes, std::uint32_t queue_depth) {
            const auto plan = plan_layout(w, strategy_of(strategy, fragment_bytes), kDefaultAlignment, direct);
            const auto cfg = engine_of(backend, direct, queue_depth);
            const auto mode = emulation_mode_from_string(emulation);
            std::string manifest;
            {
                py::gil_scoped_release unlocked;
                manifest = manifest_to_json(checkpoint(w, plan, dir, cfg, mode).manifest);
            }
            return loads(manifest);
        },
        py::arg("workload"), py::arg("dir"), py::arg("strategy") = "file-per-shard", py::arg("backend") = "ring",
        py::arg("direct") = false, py::arg("emulation") = "batched", py::arg("fragment_bytes") = 512 * MiB,
        py::arg("queue_depth") = 128, "Writes and commits one checkpoint version in-process; returns its manifest.");
    m.def(
        "restore",
        [](const std::filesystem::path& dir, const std::string& backend, bool direct, const std::string& emulation,
           const std::string& alloc) {
            RestoreOptions opt;
            opt.mode = emulation_mode_from_string(emulation);
            opt.alloc = alloc_mode_from_string(alloc);
            std::vector<RankRestore> ranks;
            {
                py::gil_scoped_release unlocked;
                ranks = restore(dir, engine_of(backend, direct, 128), opt);
            }
            py::list out;
            for (const auto& r : ranks) {
                py::dict d;
                d["rank"] = r.rank;
                d["read_ops"] = r.stats.read_ops;
                d["bytes_read"] = r.stats.bytes_read;
                d["allocations"] = r.stats.allocations;
                py::list objects;
                for (const auto& o : r.objects) objects.append(object_result_dict(o));
                d["objects"] = objects;
                out.append(d);
            }
            return out;
        },
        py::arg("dir"), py::arg("backend") = "ring", py::arg("direct") = false, py::arg("emulation") = "batched",
        py::arg("alloc") = "pooled", "Restores every rank of a committed version and checks each object.");
    m.def(
        "verify",
        [](const std::filesystem::path& dir) {
            VerificationReport v;
            {
                py::gil_scoped_release unlocked;
                v = verify_checkpoint(dir);
            }
            py::dict d;
            d["usable"] = v.usable;
            d["reason"] = v.reason;
            d["passed"] = v.passed();
            d["failed"] = v.failed();
            py::list objects;
            for (const auto& o : v.objects) objects.append(object_result_dict(o));
            d["objects"] = objects;
            return d;
        },
        py::arg("dir"));
    m.def(
        "read_manifest", [](const std::filesystem::path& dir) { return loads(manifest_to_json(read_manifest(dir))); },
        py::arg("dir"));

    m.def(
        "default_config", []() { return loads(run_config_to_json(RunConfig{})); },
        "Run configuration with every field at its default.");
    m.def(
        "run",
        [](const py::dict& config) {
            const RunConfig c = config_of(config);
            std::string report;
            {
                py::gil_scoped_release unlocked;
                report = report_to_json(run_experiment(c));
            }
            return loads(report);
        },
        py::arg("config"),
        "Runs an experiment with forked rank processes; missing config keys take their defaults. Returns the report.");
    m.def(
        "expand_preset",
        [](const std::string& name, const py::dict& base) {
            py::list out;
            for (const auto& c : expand_preset(name, config_of(base))) out.append(loads(run_config_to_json(c)));
            return out;
        },
        py::arg("name"), py::arg("base") = py::dict());
    m.def("preset_names", &preset_names);

    m.def(
        "validate_report", [](const py::dict& report) { return loads(report_to_json(report_from_json(dumps(report)))); },
        py::arg("report"), "Parses a report dict against the schema; returns its canonical form.");
    m.def(
        "report_to_csv", [](const py::dict& report) { return report_to_csv(report_from_json(dumps(report))); },
        py::arg("report"));
}
