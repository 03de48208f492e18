/**
 * LLM clients behind one interface.
 *
 * OpenAiCompatClient speaks the chat-completions wire format against any
 * compatible endpoint (base URL and key from flags/environment); the stub
 * client produces deterministic descriptions offline and counts invocations,
 * standing in for the network in fixtures and tests.
 */

export interface LlmClient {
  readonly modelId: string;
  /** Number of remote calls made so far (cache layers read this). */
  readonly calls: number;
  complete(prompt: string): Promise<string>;
}

export class StubLlmClient implements LlmClient {
  readonly modelId: string;
  calls = 0;
  private readonly seed: number;

  constructor(seed: number) {
    this.seed = seed;
    this.modelId = `stub:${seed}`;
  }

  async complete(prompt: string): Promise<string> {
    this.calls += 1;
    // pull the subject out of the instruction to keep outputs class-specific
    const match = prompt.match(/characteristics of ([^.]+?) in/);
    const subject = match ? match[1].trim() : "the subject";
    const traits = [
      "rounded silhouette with a sharply defined border",
      "granular internal texture with fine speckling",
      "high contrast between core and periphery",
      "uniform tone across the central region",
      "thin elongated extensions at the margin",
      "clustered arrangement with overlapping neighbors",
      "pale halo surrounding a dense center",
      "asymmetric outline with one flattened side",
    ];
    const lines: string[] = [];
    const want = extractCount(prompt) ?? 4;
    for (let i = 0; i < want; i++) {
      const pick = traits[(this.seed + i * 3 + subject.length) % traits.length];
      lines.push(`${i + 1}. ${pick} (${subject})`);
    }
    return lines.join("\n");
  }
}

function extractCount(prompt: string): number | null {
  const match = prompt.match(/List (\d+)/);
  return match ? parseInt(match[1], 10) : null;
}

export class OpenAiCompatClient implements LlmClient {
  readonly modelId: string;
  calls = 0;
  private readonly baseUrl: string;
  private readonly apiKey: string;
  private readonly retries: number;

  constructor(modelId: string, baseUrl?: string, apiKey?: string, retries = 3) {
    this.modelId = modelId;
    this.baseUrl = (baseUrl ?? process.env.BIOVLM_LLM_BASE_URL ?? "https://api.openai.com/v1").replace(/\/$/, "");
    this.apiKey = apiKey ?? process.env.BIOVLM_LLM_API_KEY ?? "";
    this.retries = retries;
  }

  async complete(prompt: string): Promise<string> {
    let lastError: unknown;
    for (let attempt = 0; attempt < this.retries; attempt++) {
      try {
        this.calls += 1;
        const response = await fetch(`${this.baseUrl}/chat/completions`, {
          method: "POST",
          headers: {
            "content-type": "application/json",
            authorization: `Bearer ${this.apiKey}`,
          },
          body: JSON.stringify({
            model: this.modelId,
            messages: [{ role: "user", content: prompt }],
            temperature: 0.2,
          }),
        });
        if (!response.ok) {
          throw new Error(`LLM endpoint returned ${response.status}`);
        }
        const body = (await response.json()) as {
          choices?: { message?: { content?: string } }[];
        };
        const content = body.choices?.[0]?.message?.content;
        if (!content) throw new Error("LLM response carried no content");
        return content;
      } catch (err) {
        lastError = err;
        await new Promise((r) => setTimeout(r, 250 * (attempt + 1)));
      }
    }
    throw new Error(`LLM request failed after ${this.retries} attempts: ${lastError}`);
  }
}

/** Parse a client id: "stub:<seed>" or any other string as a remote model id. */
export function clientFromId(id: string): LlmClient {
  if (id.startsWith("stub:")) {
    return new StubLlmClient(parseInt(id.slice(5), 10) || 0);
  }
  return new OpenAiCompatClient(id);
}
