#ifndef DAC_TESTS_HELPERS_HPP_INCLUDED
#define DAC_TESTS_HELPERS_HPP_INCLUDED

#include <gtest/gtest.h>

#include "dac/error.hpp"

// Runs f and checks that it throws dac::Error of the given kind.
template <class F>
::testing::AssertionResult throws_kind(F&& f, dac::ErrorKind kind)
{
    try {
        f();
    } catch (const dac::Error& e) {
        if (e.kind() == kind)
            return ::testing::AssertionSuccess();
        return ::testing::AssertionFailure() << "threw " << dac::kind_name(e.kind()) << ": " << e.what();
    }
    return ::testing::AssertionFailure() << "did not throw " << dac::kind_name(kind);
}

#endif // DAC_TESTS_HELPERS_HPP_INCLUDED
