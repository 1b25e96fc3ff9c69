#include "atlas/kv_store.hpp"

#include <openssl/evp.h>
#include <sqlite3.h>

#include <array>
#include <cstdio>

#include "atlas/error.hpp"

namespace atlas {

namespace {

// Finalizes a prepared statement on scope exit.
class Statement {
 public:
  Statement(sqlite3* db, const char* sql) {
    if (sqlite3_prepare_v2(db, sql, -1, &stmt_, nullptr) != SQLITE_OK)
      throw IoError(std::string("kv prepare failed: ") + sqlite3_errmsg(db));
  }
  ~Statement() { sqlite3_finalize(stmt_); }
  Statement(const Statement&) = delete;
  Statement& operator=(const Statement&) = delete;
  sqlite3_stmt* get() const { return stmt_; }

 private:
  sqlite3_stmt* stmt_ = nullptr;
};

void exec(sqlite3* db, const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown error";
    sqlite3_free(err);
    throw IoError("kv: " + msg);
  }
}

}  // namespace

KvStore::KvStore(const std::filesystem::path& path) {
  if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_FULLMUTEX,
                      nullptr) != SQLITE_OK) {
    std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    throw IoError("cannot open kv store " + path.string() + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 5000);
  exec(db_, "PRAGMA journal_mode=WAL;");
  exec(db_, "CREATE TABLE IF NOT EXISTS kv (key TEXT PRIMARY KEY, mime TEXT NOT NULL, value BLOB NOT NULL);");
}

KvStore::~KvStore() { sqlite3_close(db_); }

void KvStore::put(std::string_view key, std::span<const std::uint8_t> value, std::string_view mime) {
  if (key.empty()) throw ValidationError("kv key must be non-empty");
  std::unique_lock lock(mutex_);
  Statement st(db_, "INSERT OR REPLACE INTO kv (key, mime, value) VALUES (?1, ?2, ?3);");
  sqlite3_bind_text(st.get(), 1, key.data(), static_cast<int>(key.size()), SQLITE_TRANSIENT);
  sqlite3_bind_text(st.get(), 2, mime.data(), static_cast<int>(mime.size()), SQLITE_TRANSIENT);
  // A zero-length blob needs a non-null pointer or SQLite stores NULL.
  static const std::uint8_t kEmpty = 0;
  sqlite3_bind_blob(st.get(), 3, value.empty() ? &kEmpty : value.data(), static_cast<int>(value.size()),
                    SQLITE_TRANSIENT);
  if (sqlite3_step(st.get()) != SQLITE_DONE) throw IoError(std::string("kv put failed: ") + sqlite3_errmsg(db_));
}

std::optional<KvValue> KvStore::get(std::string_view key) const {
  if (key.empty()) throw ValidationError("kv key must be non-empty");
  std::shared_lock lock(mutex_);
  Statement st(db_, "SELECT mime, value FROM kv WHERE key = ?1;");
  sqlite3_bind_text(st.get(), 1, key.data(), static_cast<int>(key.size()), SQLITE_TRANSIENT);
  const int rc = sqlite3_step(st.get());
  if (rc == SQLITE_DONE) return std::nullopt;
  if (rc != SQLITE_ROW) throw IoError(std::string("kv get failed: ") + sqlite3_errmsg(db_));
  KvValue out;
  out.mime = reinterpret_cast<const char*>(sqlite3_column_text(st.get(), 0));
  const auto* blob = static_cast<const std::uint8_t*>(sqlite3_column_blob(st.get(), 1));
  const int n = sqlite3_column_bytes(st.get(), 1);
  if (n > 0) out.bytes.assign(blob, blob + n);
  return out;
}

KvValue KvStore::at(std::string_view key) const {
  auto v = get(key);
  if (!v) throw NotFound("no value for key '" + std::string(key) + "'");
  return std::move(*v);
}

bool KvStore::contains(std::string_view key) const { return get(key).has_value(); }

std::size_t KvStore::size() const {
  std::shared_lock lock(mutex_);
  Statement st(db_, "SELECT COUNT(*) FROM kv;");
  if (sqlite3_step(st.get()) != SQLITE_ROW) throw IoError("kv count failed");
  return static_cast<std::size_t>(sqlite3_column_int64(st.get(), 0));
}

std::string content_key(std::initializer_list<std::string_view> parts) {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (auto part : parts) {
    const std::uint64_t len = part.size();
    EVP_DigestUpdate(ctx, &len, sizeof(len));
    EVP_DigestUpdate(ctx, part.data(), part.size());
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int n = 0;
  EVP_DigestFinal_ex(ctx, digest.data(), &n);
  EVP_MD_CTX_free(ctx);
  std::string hex;
  hex.reserve(n * 2);
  char buf[3];
  for (unsigned int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

}  // namespace atlas
