#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "augda/serialize.hpp"

// Shared by the config readers of the library and the runner.

namespace augda::detail {

class Reader {
public:
    Reader(const Json& j, std::string what) : j_(j), what_(std::move(what)) {
        if (!j_.is_object()) throw ConfigError(what_ + ": expected an object");
    }
    ~Reader() noexcept(false) {
        if (std::uncaught_exceptions() > 0) return;
        for (const auto& [k, _] : j_.items())
            if (!seen_.count(k)) throw ConfigError(what_ + ": unknown key '" + k + "'");
    }

    const Json* find(const char* key) {
        auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    template <class T>
    void operator()(const char* key, T& value) {
        if (const Json* v = find(key)) {
            try {
                if constexpr (std::is_same_v<T, double>) {
                    if (!v->is_number()) throw ConfigError("expected a number");
                } else if constexpr (std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t> ||
                                     std::is_same_v<T, std::size_t>) {
                    if (!v->is_number_integer()) throw ConfigError("expected an integer");
                } else if constexpr (std::is_same_v<T, bool>) {
                    if (!v->is_boolean()) throw ConfigError("expected true or false");
                }
                from_json_into(*v, value);
            } catch (const ConfigError& e) {
                throw ConfigError(what_ + "." + key + ": " + e.what());
            } catch (const Json::exception& e) {
                throw ConfigError(what_ + "." + key + ": " + e.what());
            }
        }
    }

    template <class T>
    void optional(const char* key, std::optional<T>& value) {
        if (const Json* v = find(key)) {
            if (v->is_null()) value.reset();
            else value = v->get<T>();
        }
    }

private:
    template <class T>
    static void from_json_into(const Json& j, T& value) {
        if constexpr (std::is_arithmetic_v<T> || std::is_same_v<T, std::string> ||
                      std::is_same_v<T, std::vector<int>> || std::is_same_v<T, std::vector<std::string>>) {
            value = j.get<T>();
        } else {
            from_json(j, value);
        }
    }

    const Json& j_;
    std::string what_;
    std::set<std::string> seen_;
};

template <class T>
void put_optional(Json& j, const char* key, const std::optional<T>& v) {
    j[key] = v ? Json(*v) : Json(nullptr);
}

}  // namespace augda::detail
