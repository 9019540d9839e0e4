/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

#include <stdexcept>
#include <string>

namespace vgssl {

/// A computation hit a degenerate numeric configuration (zero norm, zero column).
class NumericError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// An operation was invoked on an object that is not in a state that supports it.
class InvalidState : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// A sampler could not satisfy a request (too few eligible queries or negatives).
class SamplingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

} // namespace vgssl
