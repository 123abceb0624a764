# Copyright 2019-2024 SURF.
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#    http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
from typing import Literal, Union

from pydantic import Field
from pydantic_settings import BaseSettings


class PricecastSettings(BaseSettings):
    """Environment settings of the pricecast command line tool."""

    PRICECAST_THREADS: Union[int, None] = Field(default=None, ge=1)
    LOG_LEVEL: str = "INFO"
    LOG_OUTPUT: Literal["plain", "colored", "json"] = "plain"

    def thread_limit(self, tasks: int) -> int:
        """Worker threads for `tasks` independent jobs; defaults to one thread per job."""
        return max(1, min(tasks, self.PRICECAST_THREADS or tasks))