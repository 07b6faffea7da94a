import { describe, expect, it } from "vitest";

import { SseParser } from "../src/sse.js";

describe("SseParser", () => {
  it("parses a single complete event", () => {
    const parser = new SseParser();
    const events = parser.push('data: {"a":1}\n\n');
    expect(events).toEqual([{ data: '{"a":1}' }]);
  });

  it("buffers partial chunks across pushes", () => {
    const parser = new SseParser();
    expect(parser.push("data: {\"a\"")).toEqual([]);
    expect(parser.push(":1}\n")).toEqual([]);
    expect(parser.push("\n")).toEqual([{ data: '{"a":1}' }]);
  });

  it("parses several events in one chunk and preserves order", () => {
    const parser = new SseParser();
    const events = parser.push("data: one\n\ndata: two\n\ndata: three\n\n");
    expect(events.map((e) => e.data)).toEqual(["one", "two", "three"]);
  });

  it("ignores comments and unrelated fields", () => {
    const parser = new SseParser();
    const events = parser.push(": keepalive\n\nevent: tick\ndata: payload\n\n");
    expect(events).toEqual([{ data: "payload" }]);
  });

  it("joins multi-line data blocks", () => {
    const parser = new SseParser();
    const events = parser.push("data: line1\ndata: line2\n\n");
    expect(events).toEqual([{ data: "line1\nline2" }]);
  });
});
