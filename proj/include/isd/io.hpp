#pragma once

// On-disk formats: dataset directories, embedding tables, checkpoints and
// report tables. Arrays are stored as 32-bit little-endian floats, so values
// written from memory come back rounded to float precision; a second
// write/read cycle is exact.

#include <filesystem>
#include <string>
#include <vector>

#include "isd/contrastive_decoder.hpp"
#include "isd/mapping_models.hpp"
#include "isd/synthgen.hpp"

namespace isd::io {

namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---- raw arrays ----

void write_f32(const fs::path& path, const double* values, std::size_t count);
std::vector<double> read_f32(const fs::path& path, std::size_t expected_count);

/// Rounds every value to the nearest float.
Matrix to_f32(const Matrix& m);
void round_to_f32(Tensor& t);
void round_to_f32(ParameterStore& store);

// ---- datasets ----

struct Dataset {
    std::vector<PairedSession> sessions;
    Vocabulary vocabulary;
    SynthConfig config;
    GroundTruth ground_truth;
};

/// Writes manifest.json, annotations.json, ground_truth.json and one .bin per trial.
void write_dataset(const fs::path& dir, const SyntheticDataset& ds);
Dataset read_dataset(const fs::path& dir);

// ---- embedding tables ----

/// "#encoder=<name> dim=<D> version=1" header, then word<TAB>v1<TAB>...<TAB>vD.
void write_embedding_table(const fs::path& path, const EmbeddingTable& table);
EmbeddingTable read_embedding_table(const fs::path& path);

// ---- checkpoints ----

/// `<stem>.json` index plus `<stem>.bin` blob.
void save_mapping(const fs::path& stem, const TrainedMapping& model);
TrainedMapping load_mapping(const fs::path& stem);
void save_decoder(const fs::path& stem, const TrainedDecoder& decoder);
TrainedDecoder load_decoder(const fs::path& stem);

/// Rounds parameters (and the decoder word cache) to float precision, so that
/// an in-memory model predicts exactly like its reloaded checkpoint.
void round_to_f32(TrainedMapping& model);
void round_to_f32(TrainedDecoder& decoder);

// ---- report tables ----

enum class ColumnType { Str, Int, F64 };

struct Column {
    std::string name;
    ColumnType type = ColumnType::Str;
};

/// A typed table. The first CSV line is the schema row "name:type,...".
class CsvTable {
public:
    CsvTable() = default;
    explicit CsvTable(std::vector<Column> columns);

    const std::vector<Column>& columns() const noexcept { return columns_; }
    const std::vector<std::vector<std::string>>& rows() const noexcept { return rows_; }
    std::size_t column_index(const std::string& name) const;

    /// Cells must parse as their column type.
    void add_row(std::vector<std::string> cells);

    std::string str(std::size_t row, const std::string& column) const;
    double f64(std::size_t row, const std::string& column) const;
    long i64(std::size_t row, const std::string& column) const;

    friend bool operator==(const CsvTable&, const CsvTable&);

private:
    std::vector<Column> columns_;
    std::vector<std::vector<std::string>> rows_;
};

/// Shortest text that parses back to the same double.
std::string format_double(double v);
inline std::string cell(double v) { return format_double(v); }
inline std::string cell(std::size_t v) { return std::to_string(v); }
inline std::string cell(int v) { return std::to_string(v); }
inline std::string cell(bool v) { return v ? "1" : "0"; }
inline std::string cell(std::string v) { return v; }
inline std::string cell(std::string_view v) { return std::string(v); }
inline std::string cell(const char* v) { return v; }

void write_csv(const fs::path& path, const CsvTable& table);
CsvTable read_csv(const fs::path& path);

/// Writes `path` plus `<path>.meta.json` describing the table.
void write_report_table(const fs::path& path, const CsvTable& table, const std::string& description,
                        std::uint64_t seed);

void write_text(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

}  // namespace isd::io
