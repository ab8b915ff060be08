#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "geom.hpp"

namespace meshforge {

/// Reads positions, optional `vt`/`vn` and faces. Polygons are fan
/// triangulated; negative (relative) indices are supported. Vertex order is
/// preserved.
inline TriMesh read_obj(std::istream& in) {
    TriMesh mesh;
    std::vector<Vec2> uvs;
    std::vector<Vec3> normals;
    std::vector<std::int64_t> vertex_normal;  // per vertex, index into normals
    bool any_uv = false, any_normal = false;
    std::vector<std::array<Vec2, 3>> face_uvs;

    auto resolve = [](long long idx, std::size_t n, const char* what) -> std::size_t {
        const long long r = idx > 0 ? idx - 1 : static_cast<long long>(n) + idx;
        if (idx == 0 || r < 0 || r >= static_cast<long long>(n))
            throw FormatError(std::string("obj: ") + what + " index out of range");
        return static_cast<std::size_t>(r);
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag) || tag[0] == '#') continue;
        if (tag == "v") {
            Vec3 p;
            if (!(ls >> p.x >> p.y >> p.z))
                throw FormatError("obj: bad vertex on line " + std::to_string(line_no));
            mesh.vertices.push_back(p);
            vertex_normal.push_back(-1);
        } else if (tag == "vt") {
            Vec2 t;
            if (!(ls >> t.x >> t.y))
                throw FormatError("obj: bad vt on line " + std::to_string(line_no));
            uvs.push_back(t);
        } else if (tag == "vn") {
            Vec3 n;
            if (!(ls >> n.x >> n.y >> n.z))
                throw FormatError("obj: bad vn on line " + std::to_string(line_no));
            normals.push_back(n);
        } else if (tag == "f") {
            struct Corner {
                std::size_t v;
                std::int64_t t = -1, n = -1;
            };
            std::vector<Corner> poly;
            std::string tok;
            while (ls >> tok) {
                Corner c{};
                long long vi = 0, ti = 0, ni = 0;
                const auto s1 = tok.find('/');
                vi = std::stoll(tok.substr(0, s1));
                if (s1 != std::string::npos) {
                    const auto s2 = tok.find('/', s1 + 1);
                    const std::string ts = tok.substr(s1 + 1, s2 == std::string::npos ? std::string::npos : s2 - s1 - 1);
                    if (!ts.empty()) ti = std::stoll(ts);
                    if (s2 != std::string::npos && s2 + 1 < tok.size()) ni = std::stoll(tok.substr(s2 + 1));
                }
                c.v = resolve(vi, mesh.vertices.size(), "vertex");
                if (ti != 0) c.t = static_cast<std::int64_t>(resolve(ti, uvs.size(), "vt"));
                if (ni != 0) c.n = static_cast<std::int64_t>(resolve(ni, normals.size(), "vn"));
                poly.push_back(c);
            }
            if (poly.size() < 3) throw FormatError("obj: face with < 3 corners on line " + std::to_string(line_no));
            for (std::size_t k = 1; k + 1 < poly.size(); ++k) {
                const Corner cs[3] = {poly[0], poly[k], poly[k + 1]};
                Face f{};
                std::array<Vec2, 3> fu{};
                for (int j = 0; j < 3; ++j) {
                    f[j] = static_cast<std::uint32_t>(cs[j].v);
                    if (cs[j].t >= 0) {
                        fu[j] = uvs[static_cast<std::size_t>(cs[j].t)];
                        any_uv = true;
                    }
                    if (cs[j].n >= 0) {
                        vertex_normal[cs[j].v] = cs[j].n;
                        any_normal = true;
                    }
                }
                mesh.faces.push_back(f);
                face_uvs.push_back(fu);
            }
        }
    }
    if (any_uv) mesh.face_uvs = std::move(face_uvs);
    if (any_normal) {
        mesh.normals.resize(mesh.vertices.size());
        for (std::size_t i = 0; i < mesh.vertices.size(); ++i)
            mesh.normals[i] = vertex_normal[i] >= 0
                                  ? normalized(normals[static_cast<std::size_t>(vertex_normal[i])])
                                  : Vec3{0, 0, 1};
    }
    return mesh;
}

inline TriMesh read_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    return read_obj(in);
}

/// Writes with round-trip precision. UVs are emitted one `vt` per face
/// corner.
inline void write_obj(std::ostream& out, const TriMesh& mesh) {
    char buf[128];
    for (auto v : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
        out << buf;
    }
    for (const auto& fu : mesh.face_uvs)
        for (auto t : fu) {
            std::snprintf(buf, sizeof buf, "vt %.17g %.17g\n", t.x, t.y);
            out << buf;
        }
    for (auto n : mesh.normals) {
        std::snprintf(buf, sizeof buf, "vn %.17g %.17g %.17g\n", n.x, n.y, n.z);
        out << buf;
    }
    const bool uv = mesh.has_uvs(), nrm = mesh.has_normals();
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        out << 'f';
        for (int j = 0; j < 3; ++j) {
            const auto v = mesh.faces[f][j] + 1;
            out << ' ' << v;
            if (uv || nrm) out << '/';
            if (uv) out << (3 * f + static_cast<std::size_t>(j) + 1);
            if (nrm) out << '/' << v;
        }
        out << '\n';
    }
}

inline void write_obj(const std::string& path, const TriMesh& mesh) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path);
    write_obj(out, mesh);
}

}  // namespace meshforge
