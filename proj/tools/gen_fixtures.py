# Copyright 2026 The mw Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
# ============================================================================
"""Writes the byte-exact wire fixtures under tests/fixtures/.

The bytes are assembled here with struct.pack directly from the protocol
layout, independently of the C++ encoders the golden tests check.

    python3 tools/gen_fixtures.py
"""

import os
import struct

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "tests", "fixtures")

MAGIC = 0x4D574C44
DATA, HELLO, BYE = 1, 2, 3
F32, F64, I32, I64, U8 = 1, 2, 3, 4, 5


def frame(msg_type, world, op_seq, dtype, elem_count, payload=b""):
    name = world.encode()
    return (struct.pack("<IBBH", MAGIC, 1, msg_type, len(name)) + name +
            struct.pack("<QBQ", op_seq, dtype, elem_count) + payload)


def request(op, key, tail=b""):
    k = key.encode()
    return struct.pack("<BI", op, len(k)) + k + tail


def response(status, value=b""):
    return struct.pack("<BI", status, len(value)) + value


FIXTURES = {
    # DATA frame carrying F32 [1.0, 2.0].
    "frame_data_f32.bin": frame(DATA, "w1", 0, F32, 2,
                                bytes.fromhex("0000803f00000040")),
    "frame_data_i64_seq7.bin": frame(DATA, "pipeline-3", 7, I64, 3,
                                     struct.pack("<qqq", -1, 0, 2**40)),
    "frame_data_empty_u8.bin": frame(DATA, "w1", 1, U8, 0),
    # HELLO from rank 3; the rank travels in op_seq.
    "frame_hello_rank3.bin": frame(HELLO, "w1", 3, 0, 0),
    "frame_bye.bin": frame(BYE, "w1", 0, 0, 0),
    "store_req_set.bin": request(1, "world/w1/rank/0/addr",
                                 struct.pack("<I", 13) + b"10.0.0.1:4000"),
    "store_req_get.bin": request(2, "world/w1/rank/0/addr"),
    "store_req_add.bin": request(3, "world/w1/joined", struct.pack("<q", -5)),
    "store_req_wait.bin": request(4, "world/w1/ready", struct.pack("<Q", 1500)),
    "store_req_delete.bin": request(5, "k"),
    "store_req_delete_prefix.bin": request(6, "world/w2/"),
    "store_resp_ok_value.bin": response(0, b"10.0.0.1:4000"),
    "store_resp_ok_empty.bin": response(0),
    "store_resp_add_42.bin": response(0, struct.pack("<q", 42)),
    "store_resp_not_found.bin": response(1),
    "store_resp_timeout.bin": response(2),
}


def main():
    os.makedirs(OUT, exist_ok=True)
    for name, data in sorted(FIXTURES.items()):
        with open(os.path.join(OUT, name), "wb") as f:
            f.write(data)
        print(f"{name}: {data.hex()}")


if __name__ == "__main__":
    main()
