#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace tsd {

/// Counter-based pseudo-random generator.
///
/// The k-th draw of a stream is mix64(key + k * GAMMA), where mix64 is the
/// splitmix64 finalizer and key is derived from (seed, stream name). Every
/// consumer owns its own named stream, so draws are reproducible and adding
/// or removing one consumer never shifts another's sequence.
class Rng {
public:
	explicit Rng(std::uint64_t key) : key_(key) {}

	/// Stream keyed by a run seed and a stable purpose name, e.g. "init/teacher.embed.W".
	static Rng stream(std::uint64_t seed, std::string_view name) {
		std::uint64_t h = 1469598103934665603ull; // FNV-1a 64
		for (unsigned char c : name) {
			h ^= c;
			h *= 1099511628211ull;
		}
		return Rng(mix64(seed ^ mix64(h)));
	}

	std::uint64_t next_u64() { return mix64(key_ + (counter_++) * 0x9E3779B97F4A7C15ull); }

	/// Uniform in [0, 1).
	double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Standard normal via Box-Muller; always consumes exactly two draws.
	double normal() {
		double u1 = uniform();
		double u2 = uniform();
		if (u1 <= 0.0)
			u1 = 0x1.0p-53;
		return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
	}

	/// Uniform integer in [0, n).
	std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

private:
	static std::uint64_t mix64(std::uint64_t z) {
		z += 0x9E3779B97F4A7C15ull;
		z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
		z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
		return z ^ (z >> 31);
	}

	std::uint64_t key_;
	std::uint64_t counter_ = 0;
};

} // namespace tsd
