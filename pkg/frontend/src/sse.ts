// Incremental server-sent-events parser over fetch streaming.
// Implemented on top of fetch + ReadableStream so the same code runs in the
// browser and under node-based tests (no EventSource dependency).

export interface SseEvent {
  data: string;
}

/** Stateful splitter: feed chunks, get completed `data:` events back. */
export class SseParser {
  private buffer = "";

  push(chunk: string): SseEvent[] {
    this.buffer += chunk;
    const events: SseEvent[] = [];
    let sep: number;
    while ((sep = this.buffer.indexOf("\n\n")) !== -1) {
      const block = this.buffer.slice(0, sep);
      this.buffer = this.buffer.slice(sep + 2);
      const dataLines = block
        .split("\n")
        .filter((line) => line.startsWith("data:"))
        .map((line) => line.slice(5).trimStart());
      if (dataLines.length > 0) {
        events.push({ data: dataLines.join("\n") });
      }
    }
    return events;
  }
}

/**
 * Read an SSE response body to completion, invoking onEvent per event.
 * Resolves when the stream closes; rejects on network failure.
 */
export async function readSseStream(
  body: ReadableStream<Uint8Array>,
  onEvent: (event: SseEvent) => void,
  signal?: AbortSignal,
): Promise<void> {
  const reader = body.getReader();
  const decoder = new TextDecoder();
  const parser = new SseParser();
  try {
    for (;;) {
      if (signal?.aborted) return;
      const { done, value } = await reader.read();
      if (done) return;
      for (const event of parser.push(decoder.decode(value, { stream: true }))) {
        onEvent(event);
      }
    }
  } finally {
    reader.releaseLock();
  }
}
