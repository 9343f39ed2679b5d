#include "ape/checkpoint.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "ape/text_io.hpp"

namespace ape {

namespace {

void write_matrix(std::ostream& out, const Array& a) {
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const auto row = a.row_span(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c != 0) out << ' ';
            out << format_double(row[c]);
        }
        out << '\n';
    }
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    std::string word(std::string_view what) {
        std::string w;
        if (!(in_ >> w)) throw FormatError("checkpoint: unexpected end of file, expected " + std::string(what));
        return w;
    }

    void expect(std::string_view keyword) {
        const auto w = word(keyword);
        if (w != keyword) {
            throw FormatError("checkpoint: expected '" + std::string(keyword) + "', found '" + w + "'");
        }
    }

    std::size_t count(std::string_view what) {
        const auto w = word(what);
        long long v = 0;
        try {
            v = parse_integer(w, what);
        } catch (const std::invalid_argument& e) {
            throw FormatError(std::string("checkpoint: ") + e.what());
        }
        if (v < 0) throw FormatError("checkpoint: negative " + std::string(what));
        return static_cast<std::size_t>(v);
    }

    double number(std::string_view what) {
        const auto w = word(what);
        try {
            return parse_double(w, what);
        } catch (const std::invalid_argument& e) {
            throw FormatError(std::string("checkpoint: ") + e.what());
        }
    }

    Array matrix(std::size_t rows, std::size_t cols, std::string_view what) {
        std::vector<double> values(rows * cols);
        for (double& v : values) v = number(what);
        try {
            return Array({rows, cols}, std::move(values));
        } catch (const std::exception& e) {
            throw FormatError(std::string("checkpoint: ") + e.what());
        }
    }

private:
    std::istream& in_;
};

}  // namespace

void write_model(std::ostream& out, const SphericalModel& model) {
    model.validate();
    out << "ape-checkpoint " << kCheckpointVersion << '\n';
    out << "activation " << to_string(model.activation) << '\n';
    out << "temperature " << format_double(model.temperature) << '\n';
    out << "layers " << model.layer_count() << '\n';
    for (std::size_t l = 0; l < model.layer_count(); ++l) {
        const auto& w = model.weights[l];
        out << "weight " << w.rows() << ' ' << w.cols() << '\n';
        write_matrix(out, w);
        out << "bias " << model.biases[l].cols() << '\n';
        write_matrix(out, model.biases[l]);
    }
    out << "prototypes " << model.prototypes.rows() << ' ' << model.prototypes.cols() << '\n';
    write_matrix(out, model.prototypes);
    out << "end\n";
}

SphericalModel read_model(std::istream& in) {
    Reader r(in);
    r.expect("ape-checkpoint");
    const auto version = r.count("format version");
    if (version != static_cast<std::size_t>(kCheckpointVersion)) {
        throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
    }
    SphericalModel m;
    r.expect("activation");
    try {
        m.activation = parse_activation(r.word("activation name"));
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    r.expect("temperature");
    m.temperature = r.number("temperature");
    r.expect("layers");
    const auto layers = r.count("layer count");
    for (std::size_t l = 0; l < layers; ++l) {
        r.expect("weight");
        const auto in_w = r.count("weight rows");
        const auto out_w = r.count("weight cols");
        m.weights.push_back(r.matrix(in_w, out_w, "weight value"));
        r.expect("bias");
        const auto bw = r.count("bias width");
        m.biases.push_back(r.matrix(1, bw, "bias value"));
    }
    r.expect("prototypes");
    const auto k = r.count("prototype count");
    const auto d = r.count("prototype width");
    m.prototypes = r.matrix(k, d, "prototype value");
    r.expect("end");
    try {
        m.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    return m;
}

void save_model(const SphericalModel& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    write_model(out, model);
    if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

SphericalModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
    return read_model(in);
}

}  // namespace ape
